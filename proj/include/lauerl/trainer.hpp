#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lauerl/env.hpp"
#include "lauerl/nn.hpp"

namespace lauerl {

struct StddevSchedule {
  double start = 1.0, end = 0.1;
  long horizon = 100000;

  double at(long step) const {
    if (horizon <= 0) return end;
    const double f = std::min(1.0, static_cast<double>(step) / horizon);
    return start + (end - start) * f;
  }
};

// Dormant-unit perturbation switch. The trailing DrM-specific knobs are
// carried in the config for completeness but are not exercised by this
// trainer (no exploitation-expectile machinery here).
struct DormantConfig {
  bool enabled = false;
  double threshold = 0.025;
  double min_factor = 0.2, max_factor = 1.0;
  long interval = 20000;
  double perturb_rate = 1.0;
  double temperature = 10.0;
  double target_ratio = 0.2;
  double target_exploitation = 0.6;
  double exploitation_expectile = 0.9;
  std::string stddev_type = "awake";
};

struct TrainConfig {
  double gamma = 0.99;
  long seed_frames = 2000;        // steps before updates start
  long exploration_steps = 1000;  // uniform actions continue this much longer
  long training_steps = 200000;
  int batch_size = 256;
  double lr = 1e-4;
  double tau = 0.01;  // soft target update rate
  int hidden_dim = 1024;
  int nstep = 3;
  StddevSchedule stddev;
  double stddev_clip = 0.3;
  int eval_episodes = 100;
  long eval_interval = 5000;
  int frame_stack = 1;   // this task is a static MDP; must stay 1
  int action_repeat = 1;  // must stay 1
  long replay_capacity = 0;  // 0 -> training_steps
  int update_freq = 1;
  int augment_pad = 4;
  DormantConfig dormant;

  void validate() const;
  long capacity() const { return replay_capacity > 0 ? replay_capacity : training_steps; }
};

struct AgentNets {
  nn::EncoderNet<float> encoder;
  nn::MlpNet<float> actor;  // feature -> 2, tanh head
  nn::MlpNet<float> q1, q2, q1_target, q2_target;

  void init(int hidden_dim, std::uint64_t seed);
  std::vector<nn::TensorView<float>> views();         // every tensor, fixed order
  std::vector<nn::TensorView<float>> policy_views();  // encoder + actor only
};

// mu + clamped Gaussian noise, everything clipped to [-1, 1].
Action act(const AgentNets& nets, const Observation& obs, double stddev, double clip,
           bool deterministic, Rng& rng);

// Ring of episodes with uniform sampling over completed transitions and
// n-step assembly that never crosses an episode boundary.
class ReplayBuffer {
 public:
  ReplayBuffer(long capacity, int nstep, double gamma);

  void begin_episode(const Observation& obs0);
  void add_step(const Action& action, double reward, const Observation& next, bool terminated);
  void finish_episode();  // makes the open episode samplable
  long size() const { return samplable_; }

  struct Sample {
    const float* obs = nullptr;
    const float* next_obs = nullptr;
    std::array<float, 2> action{0, 0};
    float reward_sum = 0;
    float discount = 0;  // gamma^m, zero when the window ends at termination
  };
  Sample sample(Rng& rng) const;

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  struct Episode {
    std::vector<std::vector<float>> obs;  // length T+1
    std::vector<std::array<float, 2>> actions;
    std::vector<float> rewards;
    bool terminated = false;
    bool complete = false;
  };
  void evict();

  long capacity_;
  int nstep_;
  double gamma_;
  std::deque<Episode> episodes_;
  std::deque<std::pair<std::uint32_t, std::uint32_t>> flat_;  // (episode id, t)
  std::uint32_t first_episode_id_ = 0;
  long samplable_ = 0;
  long stored_ = 0;
};

struct NStepBatch {
  nn::Mat<float> obs;       // 7056 x B, shift-augmented
  nn::Mat<float> next_obs;  // 7056 x B, shift-augmented
  nn::Mat<float> actions;   // 2 x B
  nn::Vec<float> reward_sum;
  nn::Vec<float> discount;
};

NStepBatch assemble_nstep_batch(const ReplayBuffer& buffer, int batch_size, int augment_pad,
                                Rng& rng);

// y = R_sum + discount * min(Q1bar, Q2bar)(S', actor(S') + noise).
nn::Vec<float> nstep_target(const NStepBatch& batch, const AgentNets& nets, double stddev,
                            double clip, Rng& rng);

struct UpdateMetrics {
  double critic_loss = 0;
  double actor_loss = 0;
  double q_mean = 0;
};

// target <- (1 - tau) target + tau online, elementwise over the registries.
void soft_update(const std::vector<nn::TensorView<float>>& online,
                 const std::vector<nn::TensorView<float>>& target, double tau);

// Persistent per-worker buffers; reused across update steps.
struct UpdateWorkspace;
UpdateWorkspace* make_update_workspace();
void free_update_workspace(UpdateWorkspace*);

UpdateMetrics update_step(AgentNets& nets, nn::Adam<float>& opt_encoder,
                          nn::Adam<float>& opt_actor, nn::Adam<float>& opt_q1,
                          nn::Adam<float>& opt_q2, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long step, Rng& rng, UpdateWorkspace& ws);

// Fraction of actor hidden units whose batch-mean |activation|, normalized by
// the layer mean, falls below the dormant threshold.
double dormant_ratio(const AgentNets& nets, const nn::Mat<float>& obs_batch, double threshold);

// Interpolates encoder/actor/critic weights toward a fresh initialization by
// factor f = clamp(max - (max-min) * ratio); targets stay put.
double dormant_perturb(AgentNets& nets, const nn::Mat<float>& obs_batch,
                       const DormantConfig& cfg, Rng& rng);

using PolicyFn = std::function<Action(const Observation&)>;

PolicyFn deterministic_policy(const AgentNets& nets);

struct EvalStats {
  double success_rate = 0;
  double mean_episode_length = 0;
  double mean_episode_reward = 0;
  std::vector<int> length_histogram;  // bins 1..max_steps
  std::vector<EpisodeRecord> records;
};

EvalStats evaluate(const PolicyFn& policy, const EnvConfig& env_cfg, std::uint64_t seed,
                   int episodes, bool keep_records);

struct MetricRow {
  long step = 0;
  double success_rate = 0;
  double mean_episode_length = 0;
  double mean_episode_reward = 0;
  double actor_loss = 0;
  double critic_loss = 0;
  double stddev = 0;
};

struct TrainResult {
  std::vector<MetricRow> rows;
  double final_success_rate = 0;
};

struct TrainOptions {
  std::string state_dir;    // when set, a resumable snapshot is written here at the end
  std::string resume_from;  // when set, continue from a snapshot directory
  std::function<void(long, long)> progress;  // (step, total)
};

TrainResult train(const EnvConfig& env_cfg, const TrainConfig& cfg, std::uint64_t seed,
                  AgentNets& nets, const TrainOptions& options = {});

void save_train_state(const std::string& dir, const AgentNets& nets,
                      const nn::Adam<float>& opt_encoder, const nn::Adam<float>& opt_actor,
                      const nn::Adam<float>& opt_q1, const nn::Adam<float>& opt_q2,
                      const ReplayBuffer& buffer, const AlignmentEnv& env, const Rng& trainer_rng,
                      long step, const std::vector<MetricRow>& rows);

}  // namespace lauerl
