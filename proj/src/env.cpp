#include "lauerl/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lauerl/binio.hpp"

namespace lauerl {

void EnvConfig::validate() const {
  crystal.validate();
  if (!(tolerance_deg > 0.0 && tolerance_deg < initial_range_deg))
    throw std::invalid_argument("env: need 0 < tolerance < initial range");
  if (!(action_scale_deg > 0.0 && action_scale_deg <= total_range_deg))
    throw std::invalid_argument("env: need 0 < action scale <= total range");
  if (max_steps < 1) throw std::invalid_argument("env: max_steps must be >= 1");
  if (chi_range_deg < 0.0 || chi_range_deg > 180.0)
    throw std::invalid_argument("env: chi range outside [0, 180]");
  if (n_spots < 0) throw std::invalid_argument("env: negative spot count");
  if (randomization) randomization->validate();
  if (curriculum) {
    if (curriculum->initial_range_stages.empty())
      throw std::invalid_argument("env: empty curriculum schedule");
    if (curriculum_stage < 0 ||
        curriculum_stage >= static_cast<int>(curriculum->initial_range_stages.size()))
      throw std::invalid_argument("env: curriculum stage out of range");
  }
  if (target_mode == TargetMode::all_cubic_high_symmetry &&
      crystal.system() != CrystalSystem::cubic)
    throw std::invalid_argument("env: cubic-family targets on a non-cubic crystal");
}

int EnvConfig::default_spot_count(CrystalSystem system) {
  switch (system) {
    case CrystalSystem::cubic:
      return 60;
    case CrystalSystem::hexagonal:
      return 90;
    case CrystalSystem::tetragonal:
      return 120;
  }
  return 60;
}

double reward(double d_prev, double d_curr, double d0, int t, bool success,
              RewardVariant variant) {
  if (t < 1) throw std::invalid_argument("reward: t must be >= 1");
  if (d0 <= 0.0) throw std::invalid_argument("reward: d0 must be positive");
  double r = 0.0;
  switch (variant) {
    case RewardVariant::dense:
      r = 100.0 * (d_prev - d_curr) / (d0 * std::sqrt(static_cast<double>(t)));
      break;
    case RewardVariant::sparse:
      r = -1.0;
      break;
  }
  if (success) r += 100.0;
  return r;
}

EnvConfig curriculum_update(const EnvConfig& cfg, double trailing_success_rate) {
  if (trailing_success_rate < 0.0 || trailing_success_rate > 1.0)
    throw std::invalid_argument("curriculum_update: success rate outside [0,1]");
  if (!cfg.curriculum) return cfg;
  EnvConfig out = cfg;
  const auto& stages = cfg.curriculum->initial_range_stages;
  if (trailing_success_rate >= cfg.curriculum->promote_threshold &&
      cfg.curriculum_stage + 1 < static_cast<int>(stages.size())) {
    out.curriculum_stage = cfg.curriculum_stage + 1;
    out.initial_range_deg = stages[out.curriculum_stage];
  }
  return out;
}

Matrix3 AlignmentEnv::lab_to_detector() {
  // Lab x (beam) -> detector z, lab y -> detector x, lab z -> detector y.
  Matrix3 C;
  C << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  return C;
}

AlignmentEnv::AlignmentEnv(const EnvConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  if (cfg_.curriculum)
    cfg_.initial_range_deg = cfg_.curriculum->initial_range_stages[cfg_.curriculum_stage];
}

Matrix3 AlignmentEnv::orientation() const {
  const Matrix3 omega_t = compose_orientation(omega0_, theta_cum_, phi_cum_);
  return lab_to_detector() * omega_t * omega0_ * base_;
}

double AlignmentEnv::distance() const {
  return angular_distance_deg(orientation(), targets_, Vector3(0, 0, -1));
}

void AlignmentEnv::render() {
  std::vector<Spot> spots = compute_spots(ep_spec_, orientation(), ep_det_, cfg_.band);
  spots = select_spots(std::move(spots), ep_n_spots_);
  if (cfg_.randomization)
    spots = perturb_spots(std::move(spots), *cfg_.randomization, ep_det_, rng_);
  last_spots_ = spots;
  obs_ = render_observation(spots, ep_det_);
}

BinaryCanvas AlignmentEnv::current_canvas() const {
  return render_canvas(last_spots_, ep_det_);
}

StepResult AlignmentEnv::reset() {
  // Per-episode draws, fixed order: space group, lattice, distance, spot
  // count (when randomizing), then target index and initial angles.
  ep_spec_ = cfg_.crystal;
  ep_det_ = cfg_.detector;
  ep_n_spots_ = cfg_.n_spots;
  if (cfg_.randomization) {
    const RandomizationConfig& rc = *cfg_.randomization;
    if (!rc.space_group_pool.empty())
      ep_spec_.space_group =
          rc.space_group_pool[rng_.uniform_int(0, static_cast<int>(rc.space_group_pool.size()) - 1)];
    const CrystalSystem sys = ep_spec_.system();
    const double a = rng_.uniform(rc.lat_a_min, rc.lat_a_max);
    switch (sys) {
      case CrystalSystem::cubic:
        ep_spec_.lattice = LatticeConstants::cubic(a);
        break;
      case CrystalSystem::hexagonal:
        ep_spec_.lattice = LatticeConstants::hexagonal(a, rng_.uniform(rc.lat_c_min, rc.lat_c_max));
        break;
      case CrystalSystem::tetragonal:
        ep_spec_.lattice = LatticeConstants::tetragonal(a, rng_.uniform(rc.lat_c_min, rc.lat_c_max));
        break;
    }
    ep_det_.distance_cm = rng_.uniform(rc.distance_min_cm, rc.distance_max_cm);
    ep_n_spots_ = rng_.uniform_int(rc.spots_min, rc.spots_max);
  }
  ep_spec_.validate();
  targets_ = target_set(ep_spec_, cfg_.target_mode);

  const Vector3 lab_beam_axis(1, 0, 0);
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 1000)
      throw std::runtime_error("reset: could not sample a start outside the tolerance");
    const int ti = rng_.uniform_int(0, static_cast<int>(targets_.axes.size()) - 1);
    theta0_ = rng_.uniform(-cfg_.initial_range_deg, cfg_.initial_range_deg);
    phi0_ = rng_.uniform(-cfg_.initial_range_deg, cfg_.initial_range_deg);
    chi0_ = rng_.uniform(-cfg_.chi_range_deg, cfg_.chi_range_deg);
    omega0_ = initial_orientation(theta0_, chi0_, phi0_);
    base_ = align_axis_to(targets_.axes[ti], lab_beam_axis);
    theta_cum_ = 0.0;
    phi_cum_ = 0.0;
    const double d0 = distance();
    if (d0 > cfg_.tolerance_deg) {
      d0_ = d_prev_ = d0;
      break;
    }
  }

  // Oracle residual: R_y(t*) R_z(p*) x = s w, w = Omega0^T x, sign s making
  // w_x nonnegative (Friedel-equivalent solution inside the action range).
  const Vector3 w = omega0_.transpose() * lab_beam_axis;
  const double s = w.x() >= 0.0 ? 1.0 : -1.0;
  phi_star_ = rad_to_deg(std::asin(std::clamp(s * w.y(), -1.0, 1.0)));
  theta_star_ = rad_to_deg(std::atan2(-s * w.z(), s * w.x()));

  step_ = 0;
  active_ = true;
  render();

  record_ = EpisodeRecord{};
  EpisodeStep init;
  init.t = 0;
  init.distance_deg = d0_;
  init.beam_crystal = orientation().transpose() * Vector3(0, 0, 1);
  if (init.beam_crystal.z() < 0.0) init.beam_crystal = -init.beam_crystal;
  record_.steps.push_back(init);

  StepResult out;
  out.observation = obs_;
  out.info = info();
  return out;
}

StepResult AlignmentEnv::step(const Action& action) {
  if (!active_) throw std::logic_error("step called after episode end");
  Action a = action;
  for (double& v : a) {
    if (!std::isfinite(v)) throw std::invalid_argument("step: non-finite action");
    v = std::clamp(v, -1.0, 1.0);
  }
  record_.steps.back().action = a;
  record_.steps.back().has_action = true;

  step_ += 1;
  theta_cum_ = std::clamp(theta_cum_ + cfg_.action_scale_deg * a[0], -cfg_.total_range_deg,
                          cfg_.total_range_deg);
  phi_cum_ = std::clamp(phi_cum_ + cfg_.action_scale_deg * a[1], -cfg_.total_range_deg,
                        cfg_.total_range_deg);

  const double d = distance();
  const bool success = d <= cfg_.tolerance_deg;
  const double r = reward(d_prev_, d, d0_, step_, success, cfg_.reward_variant);
  d_prev_ = d;
  render();

  StepResult out;
  out.observation = obs_;
  out.reward = r;
  out.terminated = success;
  out.truncated = !success && step_ >= cfg_.max_steps;
  out.info = info();
  if (out.terminated || out.truncated) active_ = false;

  EpisodeStep rec;
  rec.t = step_;
  rec.reward = r;
  rec.distance_deg = d;
  rec.beam_crystal = orientation().transpose() * Vector3(0, 0, 1);
  if (rec.beam_crystal.z() < 0.0) rec.beam_crystal = -rec.beam_crystal;
  record_.steps.push_back(rec);
  record_.terminated = out.terminated;
  record_.truncated = out.truncated;
  return out;
}

EnvInfo AlignmentEnv::info() const {
  EnvInfo i;
  i.distance_deg = d_prev_;
  i.theta_cum_deg = theta_cum_;
  i.phi_cum_deg = phi_cum_;
  i.step = step_;
  return i;
}

Action AlignmentEnv::oracle_action() const {
  const double s = cfg_.action_scale_deg;
  return Action{std::clamp((theta_star_ - theta_cum_) / s, -1.0, 1.0),
                std::clamp((phi_star_ - phi_cum_) / s, -1.0, 1.0)};
}

void AlignmentEnv::save_state(std::ostream& os) const {
  binio::write_tag(os, "ENVSTATE1");
  rng_.save(os);
  os << ' ';
  binio::write_pod(os, ep_spec_.space_group);
  binio::write_pod(os, ep_spec_.lattice);
  binio::write_pod(os, ep_det_);
  binio::write_pod(os, ep_n_spots_);
  binio::write_pod(os, static_cast<int>(targets_.axes.size()));
  for (const auto& v : targets_.axes) binio::write_pod(os, v);
  binio::write_pod(os, omega0_);
  binio::write_pod(os, base_);
  binio::write_pod(os, theta_star_);
  binio::write_pod(os, phi_star_);
  binio::write_pod(os, theta_cum_);
  binio::write_pod(os, phi_cum_);
  binio::write_pod(os, step_);
  binio::write_pod(os, d0_);
  binio::write_pod(os, d_prev_);
  binio::write_pod(os, active_);
  binio::write_vector(os, obs_.values);
  binio::write_vector(os, last_spots_);
  binio::write_pod(os, record_.terminated);
  binio::write_pod(os, record_.truncated);
  binio::write_vector(os, record_.steps);
}

void AlignmentEnv::load_state(std::istream& is) {
  binio::read_tag(is, "ENVSTATE1");
  rng_.load(is);
  is.get();
  binio::read_pod(is, ep_spec_.space_group);
  binio::read_pod(is, ep_spec_.lattice);
  binio::read_pod(is, ep_det_);
  binio::read_pod(is, ep_n_spots_);
  int n_targets = 0;
  binio::read_pod(is, n_targets);
  targets_.axes.assign(n_targets, Vector3::Zero());
  for (auto& v : targets_.axes) binio::read_pod(is, v);
  targets_.mode = cfg_.target_mode;
  binio::read_pod(is, omega0_);
  binio::read_pod(is, base_);
  binio::read_pod(is, theta_star_);
  binio::read_pod(is, phi_star_);
  binio::read_pod(is, theta_cum_);
  binio::read_pod(is, phi_cum_);
  binio::read_pod(is, step_);
  binio::read_pod(is, d0_);
  binio::read_pod(is, d_prev_);
  binio::read_pod(is, active_);
  binio::read_vector(is, obs_.values);
  binio::read_vector(is, last_spots_);
  binio::read_pod(is, record_.terminated);
  binio::read_pod(is, record_.truncated);
  binio::read_vector(is, record_.steps);
}

void write_episode_csv(std::ostream& os, const EpisodeRecord& record) {
  os << "t,a_theta,a_phi,reward,distance_deg,beam_x,beam_y,beam_z\n";
  for (const EpisodeStep& s : record.steps) {
    os << s.t << ',';
    if (s.has_action)
      os << s.action[0] << ',' << s.action[1] << ',';
    else
      os << ",,";
    if (s.t > 0)
      os << s.reward << ',';
    else
      os << ',';
    os << s.distance_deg << ',' << s.beam_crystal.x() << ',' << s.beam_crystal.y() << ','
       << s.beam_crystal.z() << '\n';
  }
}

}  // namespace lauerl
