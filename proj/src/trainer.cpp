#include "lauerl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lauerl/binio.hpp"
#include "lauerl/checkpoint.hpp"
#include "lauerl/threading.hpp"

namespace lauerl {

using nn::Mat;
using nn::Vec;

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("train: gamma outside (0,1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("train: tau outside (0,1]");
  if (batch_size < 1 || training_steps < 1 || nstep < 1 || update_freq < 1)
    throw std::invalid_argument("train: non-positive size");
  if (stddev.start <= 0.0 || stddev.end <= 0.0)
    throw std::invalid_argument("train: schedule endpoints must be positive");
  if (frame_stack != 1 || action_repeat != 1)
    throw std::invalid_argument("train: frame stacking and action repeat are fixed at 1");
  if (seed_frames < 0 || exploration_steps < 0 || eval_interval < 1 || eval_episodes < 1)
    throw std::invalid_argument("train: bad schedule counts");
}

void AgentNets::init(int hidden_dim, std::uint64_t seed) {
  Rng master(seed);
  Rng r_enc = master.fork(1), r_actor = master.fork(2), r_q1 = master.fork(3),
      r_q2 = master.fork(4);
  encoder.init(r_enc);
  actor.init(nn::kFeatureDim, hidden_dim, 2, true, r_actor);
  q1.init(nn::kFeatureDim + 2, hidden_dim, 1, false, r_q1);
  q2.init(nn::kFeatureDim + 2, hidden_dim, 1, false, r_q2);
  q1_target = q1;  // exact copies
  q2_target = q2;
}

std::vector<nn::TensorView<float>> AgentNets::views() {
  auto out = nn::encoder_views(encoder, "encoder");
  for (auto& v : nn::mlp_views(actor, "actor")) out.push_back(v);
  for (auto& v : nn::mlp_views(q1, "q1")) out.push_back(v);
  for (auto& v : nn::mlp_views(q2, "q2")) out.push_back(v);
  for (auto& v : nn::mlp_views(q1_target, "q1_target")) out.push_back(v);
  for (auto& v : nn::mlp_views(q2_target, "q2_target")) out.push_back(v);
  return out;
}

std::vector<nn::TensorView<float>> AgentNets::policy_views() {
  auto out = nn::encoder_views(encoder, "encoder");
  for (auto& v : nn::mlp_views(actor, "actor")) out.push_back(v);
  return out;
}

Action act(const AgentNets& nets, const Observation& obs, double stddev, double clip,
           bool deterministic, Rng& rng) {
  nn::EncoderNet<float>::Cache ec;
  nn::MlpNet<float>::Cache ac;
  Mat<float> in(nn::kObsSize * nn::kObsSize, 1);
  std::copy(obs.values.begin(), obs.values.end(), in.data());
  const Mat<float> feat = nets.encoder.forward(in, ec);
  const Mat<float> mu = nets.actor.forward(feat, ac);
  Action a{static_cast<double>(mu(0, 0)), static_cast<double>(mu(1, 0))};
  if (!deterministic && stddev > 0.0) {
    for (double& v : a) {
      const double noise = std::clamp(rng.normal(0.0, stddev), -clip, clip);
      v = std::clamp(v + noise, -1.0, 1.0);
    }
  } else {
    for (double& v : a) v = std::clamp(v, -1.0, 1.0);
  }
  return a;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(long capacity, int nstep, double gamma)
    : capacity_(capacity), nstep_(nstep), gamma_(gamma) {
  if (capacity_ < 1) throw std::invalid_argument("replay: capacity must be positive");
}

void ReplayBuffer::begin_episode(const Observation& obs0) {
  Episode ep;
  ep.obs.push_back(obs0.values);
  episodes_.push_back(std::move(ep));
}

void ReplayBuffer::add_step(const Action& action, double reward, const Observation& next,
                            bool terminated) {
  if (episodes_.empty() || episodes_.back().complete)
    throw std::logic_error("replay: add_step without an open episode");
  Episode& ep = episodes_.back();
  ep.actions.push_back({static_cast<float>(action[0]), static_cast<float>(action[1])});
  ep.rewards.push_back(static_cast<float>(reward));
  ep.obs.push_back(next.values);
  ep.terminated = terminated;
  ++stored_;
}

void ReplayBuffer::evict() {
  while (stored_ > capacity_ && episodes_.size() > 1 && episodes_.front().complete) {
    const Episode& ep = episodes_.front();
    const long n = static_cast<long>(ep.rewards.size());
    stored_ -= n;
    samplable_ -= n;
    episodes_.pop_front();
    ++first_episode_id_;
    while (!flat_.empty() && flat_.front().first < first_episode_id_) flat_.pop_front();
  }
}

void ReplayBuffer::finish_episode() {
  if (episodes_.empty() || episodes_.back().complete) return;
  Episode& ep = episodes_.back();
  ep.complete = true;
  const std::uint32_t id = first_episode_id_ + static_cast<std::uint32_t>(episodes_.size()) - 1;
  for (std::uint32_t t = 0; t < ep.rewards.size(); ++t) flat_.push_back({id, t});
  samplable_ += static_cast<long>(ep.rewards.size());
  evict();
}

ReplayBuffer::Sample ReplayBuffer::sample(Rng& rng) const {
  if (samplable_ < 1) throw std::logic_error("replay: buffer underfull");
  const long k = rng.uniform_int(0, static_cast<int>(flat_.size()) - 1);
  const auto [id, t] = flat_[k];
  const Episode& ep = episodes_[id - first_episode_id_];
  const int T = static_cast<int>(ep.rewards.size());
  const int m = std::min<int>(nstep_, T - static_cast<int>(t));

  Sample s;
  s.obs = ep.obs[t].data();
  s.next_obs = ep.obs[t + m].data();
  s.action = ep.actions[t];
  double rsum = 0.0, g = 1.0;
  for (int i = 0; i < m; ++i) {
    rsum += g * ep.rewards[t + i];
    g *= gamma_;
  }
  s.reward_sum = static_cast<float>(rsum);
  const bool done = ep.terminated && (static_cast<int>(t) + m == T);
  s.discount = done ? 0.0f : static_cast<float>(g);
  return s;
}

void ReplayBuffer::save(std::ostream& os) const {
  binio::write_tag(os, "REPLAY1");
  binio::write_pod(os, capacity_);
  binio::write_pod(os, nstep_);
  binio::write_pod(os, gamma_);
  binio::write_pod(os, first_episode_id_);
  binio::write_pod(os, static_cast<std::uint64_t>(episodes_.size()));
  for (const Episode& ep : episodes_) {
    binio::write_pod(os, ep.terminated);
    binio::write_pod(os, ep.complete);
    binio::write_pod(os, static_cast<std::uint64_t>(ep.obs.size()));
    for (const auto& o : ep.obs) binio::write_vector(os, o);
    binio::write_vector(os, ep.actions);
    binio::write_vector(os, ep.rewards);
  }
}

void ReplayBuffer::load(std::istream& is) {
  binio::read_tag(is, "REPLAY1");
  // Capacity is configuration, not run state; a resumed run keeps its own.
  long saved_capacity = 0;
  int saved_nstep = 0;
  double saved_gamma = 0;
  binio::read_pod(is, saved_capacity);
  binio::read_pod(is, saved_nstep);
  binio::read_pod(is, saved_gamma);
  if (saved_nstep != nstep_ || saved_gamma != gamma_)
    throw std::runtime_error("replay: snapshot was recorded with different n-step/gamma");
  binio::read_pod(is, first_episode_id_);
  std::uint64_t n_eps = 0;
  binio::read_pod(is, n_eps);
  episodes_.clear();
  flat_.clear();
  stored_ = samplable_ = 0;
  for (std::uint64_t e = 0; e < n_eps; ++e) {
    Episode ep;
    binio::read_pod(is, ep.terminated);
    binio::read_pod(is, ep.complete);
    std::uint64_t n_obs = 0;
    binio::read_pod(is, n_obs);
    ep.obs.resize(n_obs);
    for (auto& o : ep.obs) binio::read_vector(is, o);
    binio::read_vector(is, ep.actions);
    binio::read_vector(is, ep.rewards);
    const std::uint32_t id = first_episode_id_ + static_cast<std::uint32_t>(e);
    stored_ += static_cast<long>(ep.rewards.size());
    if (ep.complete) {
      for (std::uint32_t t = 0; t < ep.rewards.size(); ++t) flat_.push_back({id, t});
      samplable_ += static_cast<long>(ep.rewards.size());
    }
    episodes_.push_back(std::move(ep));
  }
  evict();
}

// ---------------------------------------------------------------------------
// Batch assembly and targets

NStepBatch assemble_nstep_batch(const ReplayBuffer& buffer, int batch_size, int augment_pad,
                                Rng& rng) {
  const int d = nn::kObsSize * nn::kObsSize;
  NStepBatch b;
  b.obs.resize(d, batch_size);
  b.next_obs.resize(d, batch_size);
  b.actions.resize(2, batch_size);
  b.reward_sum.resize(batch_size);
  b.discount.resize(batch_size);
  for (int j = 0; j < batch_size; ++j) {
    const ReplayBuffer::Sample s = buffer.sample(rng);
    const int ox1 = rng.uniform_int(0, 2 * augment_pad);
    const int oy1 = rng.uniform_int(0, 2 * augment_pad);
    const int ox2 = rng.uniform_int(0, 2 * augment_pad);
    const int oy2 = rng.uniform_int(0, 2 * augment_pad);
    nn::shifted_copy(s.obs, b.obs.col(j).data(), nn::kObsSize, ox1, oy1, augment_pad);
    nn::shifted_copy(s.next_obs, b.next_obs.col(j).data(), nn::kObsSize, ox2, oy2, augment_pad);
    b.actions(0, j) = s.action[0];
    b.actions(1, j) = s.action[1];
    b.reward_sum(j) = s.reward_sum;
    b.discount(j) = s.discount;
  }
  return b;
}

namespace {

// min(Q1bar, Q2bar)(feat, clamp(actor(feat) + noise)).
Vec<float> bootstrap_min_q(const AgentNets& nets, const Mat<float>& feat,
                           const Mat<float>& noise, nn::MlpNet<float>::Cache& ac,
                           nn::MlpNet<float>::Cache& qc1, nn::MlpNet<float>::Cache& qc2) {
  const int n = static_cast<int>(feat.cols());
  Mat<float> a = nets.actor.forward(feat, ac);
  a = (a + noise).cwiseMax(-1.0f).cwiseMin(1.0f);
  Mat<float> qin(nn::kFeatureDim + 2, n);
  qin << feat, a;
  const Mat<float> v1 = nets.q1_target.forward(qin, qc1);
  const Mat<float> v2 = nets.q2_target.forward(qin, qc2);
  return v1.cwiseMin(v2).transpose();
}

Mat<float> draw_clamped_noise(int n, double stddev, double clip, Rng& rng) {
  Mat<float> noise(2, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < 2; ++i)
      noise(i, j) = static_cast<float>(std::clamp(rng.normal(0.0, stddev), -clip, clip));
  return noise;
}

}  // namespace

Vec<float> nstep_target(const NStepBatch& batch, const AgentNets& nets, double stddev,
                        double clip, Rng& rng) {
  const int n = static_cast<int>(batch.obs.cols());
  const Mat<float> noise = draw_clamped_noise(n, stddev, clip, rng);
  nn::EncoderNet<float>::Cache ec;
  nn::MlpNet<float>::Cache ac, qc1, qc2;
  const Mat<float> feat = nets.encoder.forward(batch.next_obs, ec);
  const Vec<float> boot = bootstrap_min_q(nets, feat, noise, ac, qc1, qc2);
  return batch.reward_sum + batch.discount.cwiseProduct(boot);
}

// ---------------------------------------------------------------------------
// Update step

struct UpdateWorkspace {
  struct Worker {
    nn::EncoderNet<float>::Cache enc_cache, enc_cache_t;
    nn::MlpNet<float>::Cache actor_cache, q1_cache, q2_cache, pi_q1_cache, pi_q2_cache;
    nn::EncoderNet<float>::Grads enc_grads;
    nn::MlpNet<float>::Grads actor_grads, q1_grads, q2_grads;
    double critic_loss = 0, actor_loss = 0, q_sum = 0;
    bool ready = false;
  };
  std::vector<Worker> workers;
};

UpdateWorkspace* make_update_workspace() { return new UpdateWorkspace(); }
void free_update_workspace(UpdateWorkspace* ws) { delete ws; }

void soft_update(const std::vector<nn::TensorView<float>>& online,
                 const std::vector<nn::TensorView<float>>& target, double tau) {
  const float t = static_cast<float>(tau);
  for (size_t i = 0; i < online.size(); ++i) {
    Eigen::Map<Vec<float>> tgt(target[i].data, target[i].size());
    Eigen::Map<const Vec<float>> src(online[i].data, online[i].size());
    tgt = (1.0f - t) * tgt + t * src;
  }
}

UpdateMetrics update_step(AgentNets& nets, nn::Adam<float>& opt_encoder,
                          nn::Adam<float>& opt_actor, nn::Adam<float>& opt_q1,
                          nn::Adam<float>& opt_q2, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long step, Rng& rng, UpdateWorkspace& ws) {
  const int B = cfg.batch_size;
  if (buffer.size() < B) throw std::logic_error("update_step: buffer underfull");

  NStepBatch batch = assemble_nstep_batch(buffer, B, cfg.augment_pad, rng);
  const double stddev = cfg.stddev.at(step);
  const Mat<float> noise = draw_clamped_noise(B, stddev, cfg.stddev_clip, rng);

  const int n_workers = std::min(worker_count(), B);
  if (static_cast<int>(ws.workers.size()) < n_workers) ws.workers.resize(n_workers);

  parallel_for(B, [&](int b0, int b1, int c) {
    auto& w = ws.workers[c];
    if (!w.ready) {
      w.enc_grads.init_like(nets.encoder);
      w.actor_grads.init_like(nets.actor);
      w.q1_grads.init_like(nets.q1);
      w.q2_grads.init_like(nets.q2);
      w.ready = true;
    }
    w.enc_grads.set_zero();
    w.actor_grads.set_zero();
    w.q1_grads.set_zero();
    w.q2_grads.set_zero();
    w.critic_loss = w.actor_loss = w.q_sum = 0;
    const int n = b1 - b0;

    // Targets from the online encoder and target critics.
    const Mat<float> feat_t = nets.encoder.forward(batch.next_obs.middleCols(b0, n), w.enc_cache_t);
    const Vec<float> boot = bootstrap_min_q(nets, feat_t, noise.middleCols(b0, n), w.actor_cache,
                                            w.q1_cache, w.q2_cache);
    const Vec<float> y =
        batch.reward_sum.segment(b0, n) + batch.discount.segment(b0, n).cwiseProduct(boot);

    // Critic loss and gradients; the encoder trains through this path only.
    const Mat<float> feat = nets.encoder.forward(batch.obs.middleCols(b0, n), w.enc_cache);
    Mat<float> qin(nn::kFeatureDim + 2, n);
    qin << feat, batch.actions.middleCols(b0, n);
    const Mat<float> v1 = nets.q1.forward(qin, w.q1_cache);
    const Mat<float> v2 = nets.q2.forward(qin, w.q2_cache);
    Mat<float> d1(1, n), d2(1, n);
    for (int j = 0; j < n; ++j) {
      const float e1 = v1(0, j) - y(j);
      const float e2 = v2(0, j) - y(j);
      w.critic_loss += static_cast<double>(e1) * e1 + static_cast<double>(e2) * e2;
      w.q_sum += v1(0, j);
      d1(0, j) = 2.0f * e1 / B;
      d2(0, j) = 2.0f * e2 / B;
    }
    const Mat<float> din1 = nets.q1.backward(w.q1_cache, d1, w.q1_grads);
    const Mat<float> din2 = nets.q2.backward(w.q2_cache, d2, w.q2_grads);
    Mat<float> dfeat = din1.topRows(nn::kFeatureDim) + din2.topRows(nn::kFeatureDim);

    // Actor loss -min(Q1, Q2)(s, actor(s)) with the feature input detached.
    const Mat<float> a_pi = nets.actor.forward(feat, w.actor_cache);
    Mat<float> qin_pi(nn::kFeatureDim + 2, n);
    qin_pi << feat, a_pi;
    const Mat<float> p1 = nets.q1.forward(qin_pi, w.pi_q1_cache);
    const Mat<float> p2 = nets.q2.forward(qin_pi, w.pi_q2_cache);
    Mat<float> dp1 = Mat<float>::Zero(1, n), dp2 = Mat<float>::Zero(1, n);
    for (int j = 0; j < n; ++j) {
      const bool first = p1(0, j) <= p2(0, j);
      w.actor_loss -= std::min(p1(0, j), p2(0, j));
      (first ? dp1 : dp2)(0, j) = -1.0f / B;
    }
    const Mat<float> dact = nets.q1.input_gradient(w.pi_q1_cache, dp1).bottomRows(2) +
                            nets.q2.input_gradient(w.pi_q2_cache, dp2).bottomRows(2);
    nets.actor.backward(w.actor_cache, dact, w.actor_grads);

    nets.encoder.backward(w.enc_cache, dfeat, w.enc_grads);
  });

  // Reduce gradients in worker order, then apply the optimizer.
  auto& w0 = ws.workers[0];
  for (int c = 1; c < n_workers; ++c) {
    auto& w = ws.workers[c];
    auto add_all = [](auto dst_views, auto src_views) {
      for (size_t i = 0; i < dst_views.size(); ++i)
        Eigen::Map<Vec<float>>(dst_views[i].data, dst_views[i].size()) +=
            Eigen::Map<const Vec<float>>(src_views[i].data, src_views[i].size());
    };
    add_all(nn::encoder_grad_views<float>(w0.enc_grads), nn::encoder_grad_views<float>(w.enc_grads));
    add_all(nn::mlp_grad_views<float>(w0.actor_grads), nn::mlp_grad_views<float>(w.actor_grads));
    add_all(nn::mlp_grad_views<float>(w0.q1_grads), nn::mlp_grad_views<float>(w.q1_grads));
    add_all(nn::mlp_grad_views<float>(w0.q2_grads), nn::mlp_grad_views<float>(w.q2_grads));
    w0.critic_loss += w.critic_loss;
    w0.actor_loss += w.actor_loss;
    w0.q_sum += w.q_sum;
  }

  opt_q1.step(nn::mlp_views(nets.q1, "q1"), nn::mlp_grad_views<float>(w0.q1_grads));
  opt_q2.step(nn::mlp_views(nets.q2, "q2"), nn::mlp_grad_views<float>(w0.q2_grads));
  opt_actor.step(nn::mlp_views(nets.actor, "actor"), nn::mlp_grad_views<float>(w0.actor_grads));
  opt_encoder.step(nn::encoder_views(nets.encoder, "encoder"),
                   nn::encoder_grad_views<float>(w0.enc_grads));

  // Soft target update.
  soft_update(nn::mlp_views(nets.q1, "q1"), nn::mlp_views(nets.q1_target, "q1t"), cfg.tau);
  soft_update(nn::mlp_views(nets.q2, "q2"), nn::mlp_views(nets.q2_target, "q2t"), cfg.tau);

  UpdateMetrics m;
  m.critic_loss = w0.critic_loss / B;
  m.actor_loss = w0.actor_loss / B;
  m.q_mean = w0.q_sum / B;
  if (!std::isfinite(m.critic_loss) || !std::isfinite(m.actor_loss))
    throw std::runtime_error("update_step: non-finite loss");
  return m;
}

// ---------------------------------------------------------------------------
// Dormant-unit perturbation

double dormant_ratio(const AgentNets& nets, const Mat<float>& obs_batch, double threshold) {
  nn::EncoderNet<float>::Cache ec;
  nn::MlpNet<float>::Cache ac;
  const Mat<float> feat = nets.encoder.forward(obs_batch, ec);
  nets.actor.forward(feat, ac);
  long dormant = 0, total = 0;
  for (const Mat<float>* h : {&ac.h1, &ac.h2}) {
    const Vec<float> score = h->cwiseAbs().rowwise().mean();
    const double layer_mean = score.mean();
    for (long i = 0; i < score.size(); ++i) {
      if (layer_mean <= 0.0 || score(i) <= threshold * layer_mean) ++dormant;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(dormant) / total : 0.0;
}

double dormant_perturb(AgentNets& nets, const Mat<float>& obs_batch, const DormantConfig& cfg,
                       Rng& rng) {
  const double ratio = dormant_ratio(nets, obs_batch, cfg.threshold);
  const double f =
      std::clamp(cfg.max_factor - (cfg.max_factor - cfg.min_factor) * ratio, cfg.min_factor,
                 cfg.max_factor);
  AgentNets fresh;
  fresh.init(static_cast<int>(nets.actor.l1.W.rows()), rng.next_u64());
  auto blend = [f](std::vector<nn::TensorView<float>> dst, std::vector<nn::TensorView<float>> src) {
    for (size_t i = 0; i < dst.size(); ++i) {
      Eigen::Map<Vec<float>> d(dst[i].data, dst[i].size());
      Eigen::Map<const Vec<float>> s(src[i].data, src[i].size());
      d = static_cast<float>(f) * d + static_cast<float>(1.0 - f) * s;
    }
  };
  blend(nn::encoder_views(nets.encoder, "e"), nn::encoder_views(fresh.encoder, "e"));
  blend(nn::mlp_views(nets.actor, "a"), nn::mlp_views(fresh.actor, "a"));
  blend(nn::mlp_views(nets.q1, "q1"), nn::mlp_views(fresh.q1, "q1"));
  blend(nn::mlp_views(nets.q2, "q2"), nn::mlp_views(fresh.q2, "q2"));
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation and the training loop

PolicyFn deterministic_policy(const AgentNets& nets) {
  return [&nets](const Observation& obs) {
    Rng unused(0);
    return act(nets, obs, 0.0, 0.0, true, unused);
  };
}

EvalStats evaluate(const PolicyFn& policy, const EnvConfig& env_cfg, std::uint64_t seed,
                   int episodes, bool keep_records) {
  AlignmentEnv env(env_cfg, seed);
  EvalStats stats;
  stats.length_histogram.assign(env_cfg.max_steps, 0);
  double total_len = 0, total_rew = 0;
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    StepResult res = env.reset();
    double ep_reward = 0;
    int steps = 0;
    while (env.active()) {
      res = env.step(policy(env.observation()));
      ep_reward += res.reward;
      ++steps;
    }
    successes += res.terminated ? 1 : 0;
    total_len += steps;
    total_rew += ep_reward;
    stats.length_histogram[std::clamp(steps - 1, 0, env_cfg.max_steps - 1)] += 1;
    if (keep_records) stats.records.push_back(env.record());
  }
  stats.success_rate = static_cast<double>(successes) / episodes;
  stats.mean_episode_length = total_len / episodes;
  stats.mean_episode_reward = total_rew / episodes;
  return stats;
}

namespace {

void save_adam(std::ostream& os, const nn::Adam<float>& opt) {
  binio::write_pod(os, opt.lr);
  binio::write_pod(os, opt.t);
  binio::write_pod(os, static_cast<std::uint64_t>(opt.m.size()));
  for (size_t i = 0; i < opt.m.size(); ++i) {
    std::vector<float> m(opt.m[i].data(), opt.m[i].data() + opt.m[i].size());
    std::vector<float> v(opt.v[i].data(), opt.v[i].data() + opt.v[i].size());
    binio::write_vector(os, m);
    binio::write_vector(os, v);
  }
}

void load_adam(std::istream& is, nn::Adam<float>& opt) {
  binio::read_pod(is, opt.lr);
  binio::read_pod(is, opt.t);
  std::uint64_t n = 0;
  binio::read_pod(is, n);
  if (n != opt.m.size()) throw std::runtime_error("resume: optimizer layout mismatch");
  for (size_t i = 0; i < n; ++i) {
    std::vector<float> m, v;
    binio::read_vector(is, m);
    binio::read_vector(is, v);
    if (static_cast<long>(m.size()) != opt.m[i].size())
      throw std::runtime_error("resume: optimizer tensor size mismatch");
    std::copy(m.begin(), m.end(), opt.m[i].data());
    std::copy(v.begin(), v.end(), opt.v[i].data());
  }
}

}  // namespace

void save_train_state(const std::string& dir, const AgentNets& nets,
                      const nn::Adam<float>& opt_encoder, const nn::Adam<float>& opt_actor,
                      const nn::Adam<float>& opt_q1, const nn::Adam<float>& opt_q2,
                      const ReplayBuffer& buffer, const AlignmentEnv& env, const Rng& trainer_rng,
                      long step, const std::vector<MetricRow>& rows) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir + "/nets.ckpt", const_cast<AgentNets&>(nets).views());
  std::ofstream os(dir + "/state.bin", std::ios::binary);
  if (!os) throw std::runtime_error("resume: cannot write " + dir);
  binio::write_tag(os, "TRAINSTATE1");
  binio::write_pod(os, step);
  save_adam(os, opt_encoder);
  save_adam(os, opt_actor);
  save_adam(os, opt_q1);
  save_adam(os, opt_q2);
  trainer_rng.save(os);
  os << ' ';
  env.save_state(os);
  binio::write_vector(os, rows);
  buffer.save(os);
}

TrainResult train(const EnvConfig& env_cfg, const TrainConfig& cfg, std::uint64_t seed,
                  AgentNets& nets, const TrainOptions& options) {
  env_cfg.validate();
  cfg.validate();
  Rng master(seed);
  nets.init(cfg.hidden_dim, master.fork(3).seed());
  AlignmentEnv env(env_cfg, master.fork(1).seed());
  Rng trainer_rng = master.fork(2);
  Rng dormant_rng = master.fork(4);

  ReplayBuffer buffer(cfg.capacity(), cfg.nstep, cfg.gamma);
  nn::Adam<float> opt_encoder, opt_actor, opt_q1, opt_q2;
  opt_encoder.lr = opt_actor.lr = opt_q1.lr = opt_q2.lr = cfg.lr;
  opt_encoder.init(nn::encoder_views(nets.encoder, "e"));
  opt_actor.init(nn::mlp_views(nets.actor, "a"));
  opt_q1.init(nn::mlp_views(nets.q1, "q1"));
  opt_q2.init(nn::mlp_views(nets.q2, "q2"));

  std::vector<MetricRow> rows;
  long start_step = 0;

  if (!options.resume_from.empty()) {
    nn::load_checkpoint(options.resume_from + "/nets.ckpt", nets.views());
    std::ifstream is(options.resume_from + "/state.bin", std::ios::binary);
    if (!is) throw std::runtime_error("resume: cannot open " + options.resume_from);
    binio::read_tag(is, "TRAINSTATE1");
    binio::read_pod(is, start_step);
    load_adam(is, opt_encoder);
    load_adam(is, opt_actor);
    load_adam(is, opt_q1);
    load_adam(is, opt_q2);
    trainer_rng.load(is);
    is.get();
    env.load_state(is);
    binio::read_vector(is, rows);
    buffer.load(is);
  } else {
    env.reset();
    buffer.begin_episode(env.observation());
  }

  UpdateWorkspace* ws = make_update_workspace();
  double loss_actor_acc = 0, loss_critic_acc = 0;
  long loss_count = 0;

  for (long step = start_step; step < cfg.training_steps; ++step) {
    const double stddev = cfg.stddev.at(step);
    Action a;
    if (step < cfg.seed_frames + cfg.exploration_steps)
      a = {trainer_rng.uniform(-1, 1), trainer_rng.uniform(-1, 1)};
    else
      a = act(nets, env.observation(), stddev, cfg.stddev_clip, false, trainer_rng);

    const StepResult res = env.step(a);
    buffer.add_step(a, res.reward, res.observation, res.terminated);
    if (res.terminated || res.truncated) {
      buffer.finish_episode();
      env.reset();
      buffer.begin_episode(env.observation());
    }

    if (step >= cfg.seed_frames && step % cfg.update_freq == 0 &&
        buffer.size() >= cfg.batch_size) {
      const UpdateMetrics m =
          update_step(nets, opt_encoder, opt_actor, opt_q1, opt_q2, buffer, cfg, step,
                      trainer_rng, *ws);
      loss_actor_acc += m.actor_loss;
      loss_critic_acc += m.critic_loss;
      ++loss_count;
    }

    if (cfg.dormant.enabled && (step + 1) % cfg.dormant.interval == 0 &&
        buffer.size() >= cfg.batch_size) {
      NStepBatch probe = assemble_nstep_batch(buffer, cfg.batch_size, 0, dormant_rng);
      dormant_perturb(nets, probe.obs, cfg.dormant, dormant_rng);
    }

    if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.training_steps) {
      const long eval_idx = static_cast<long>(rows.size()) + 1;
      const EvalStats stats = evaluate(deterministic_policy(nets), env_cfg,
                                       master.fork(1000 + eval_idx).seed(), cfg.eval_episodes,
                                       false);
      MetricRow row;
      row.step = step + 1;
      row.success_rate = stats.success_rate;
      row.mean_episode_length = stats.mean_episode_length;
      row.mean_episode_reward = stats.mean_episode_reward;
      row.actor_loss = loss_count ? loss_actor_acc / loss_count : 0.0;
      row.critic_loss = loss_count ? loss_critic_acc / loss_count : 0.0;
      row.stddev = stddev;
      rows.push_back(row);
      loss_actor_acc = loss_critic_acc = 0;
      loss_count = 0;
    }
    if (options.progress) options.progress(step + 1, cfg.training_steps);
  }

  if (!options.state_dir.empty())
    save_train_state(options.state_dir, nets, opt_encoder, opt_actor, opt_q1, opt_q2, buffer,
                     env, trainer_rng, cfg.training_steps, rows);

  free_update_workspace(ws);
  TrainResult result;
  result.rows = rows;
  result.final_success_rate = rows.empty() ? 0.0 : rows.back().success_rate;
  return result;
}

}  // namespace lauerl
