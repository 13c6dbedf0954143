#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "lauerl/geometry.hpp"
#include "lauerl/rng.hpp"
#include "lauerl/simulator.hpp"

namespace lauerl {

using Action = std::array<double, 2>;  // (a_theta, a_phi) in [-1, 1]

enum class RewardVariant { dense, sparse };

struct CurriculumSchedule {
  std::vector<double> initial_range_stages = {30.0, 60.0, 90.0};
  double promote_threshold = 0.9;
};

struct EnvConfig {
  CrystalSpec crystal;
  TargetMode target_mode = TargetMode::c_axis_only;
  RewardVariant reward_variant = RewardVariant::dense;

  double tolerance_deg = 5.0;
  int max_steps = 50;
  double action_scale_deg = 10.0;   // action values scale to +/- this
  double total_range_deg = 120.0;   // cumulative angle clamp (halved for experiments)
  double initial_range_deg = 90.0;  // theta0/phi0 sampling range
  double chi_range_deg = 180.0;

  DetectorGeometry detector;
  WavelengthBand band;
  int n_spots = 60;  // fixed-parameter spot count

  std::optional<RandomizationConfig> randomization;
  std::optional<CurriculumSchedule> curriculum;
  int curriculum_stage = 0;

  void validate() const;
  static int default_spot_count(CrystalSystem system);  // 60 / 90 / 120
};

struct EnvInfo {
  double distance_deg = 0.0;
  double theta_cum_deg = 0.0;
  double phi_cum_deg = 0.0;
  int step = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminated = false;  // success within tolerance
  bool truncated = false;   // step cap reached without success
  EnvInfo info;
};

struct EpisodeStep {
  int t = 0;
  Action action{0.0, 0.0};  // action taken at this state (unset on the final row)
  bool has_action = false;
  double reward = 0.0;  // reward received on entering this state (absent at t=0)
  double distance_deg = 0.0;
  Vector3 beam_crystal = Vector3::Zero();  // beam direction in the crystal frame
};

struct EpisodeRecord {
  std::vector<EpisodeStep> steps;
  bool terminated = false;
  bool truncated = false;
};

// Dense: 100 (d_prev - d_curr) / (d0 sqrt(t)), plus 100 on success.
// Sparse: -1 per step, plus 100 on success.
double reward(double d_prev, double d_curr, double d0, int t, bool success,
              RewardVariant variant);

// Advances one curriculum stage (growing the initial range) when the trailing
// success rate reaches the promotion threshold; saturates at the last stage.
EnvConfig curriculum_update(const EnvConfig& cfg, double trailing_success_rate);

// One alignment episode at a time. The paper's goniometer composition
// operates in a lab frame whose beam axis is x (chi rolls about it); the
// simulator's detector frame has the beam along -z. A fixed change of basis
// bridges the two, so theta shifts the pattern along one image axis, phi
// along the other, and chi_0 rolls it about the center.
class AlignmentEnv {
 public:
  AlignmentEnv(const EnvConfig& cfg, std::uint64_t seed);

  StepResult reset();
  StepResult step(const Action& action);

  const Observation& observation() const { return obs_; }
  const EpisodeRecord& record() const { return record_; }
  const EnvConfig& config() const { return cfg_; }
  bool active() const { return active_; }
  EnvInfo info() const;
  double initial_distance_deg() const { return d0_; }

  // Cheating controller: corrective action from the true angle residuals.
  Action oracle_action() const;

  // Episode internals used by fixture generators.
  const CrystalSpec& episode_spec() const { return ep_spec_; }
  const DetectorGeometry& episode_detector() const { return ep_det_; }
  double theta0_deg() const { return theta0_; }
  double chi0_deg() const { return chi0_; }
  double phi0_deg() const { return phi0_; }
  Matrix3 orientation() const;  // crystal -> detector frame
  BinaryCanvas current_canvas() const;

  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

  static Matrix3 lab_to_detector();  // the fixed frame bridge

 private:
  void render();
  double distance() const;

  EnvConfig cfg_;
  Rng rng_;

  // Per-episode draws.
  CrystalSpec ep_spec_;
  DetectorGeometry ep_det_;
  int ep_n_spots_ = 0;
  TargetSet targets_;
  Matrix3 omega0_ = Matrix3::Identity();
  Matrix3 base_ = Matrix3::Identity();  // target axis -> lab beam axis
  double theta_star_ = 0.0, phi_star_ = 0.0;  // oracle residual targets
  double theta0_ = 0.0, chi0_ = 0.0, phi0_ = 0.0;

  // Mutable episode state.
  double theta_cum_ = 0.0, phi_cum_ = 0.0;
  int step_ = 0;
  double d0_ = 0.0, d_prev_ = 0.0;
  bool active_ = false;
  Observation obs_;
  std::vector<Spot> last_spots_;
  EpisodeRecord record_;
};

void write_episode_csv(std::ostream& os, const EpisodeRecord& record);

}  // namespace lauerl
