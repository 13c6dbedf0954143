#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "lauerl/env.hpp"
#include "test_support.hpp"

using namespace lauerl;

namespace {

EnvConfig cubic_fixed() {
  EnvConfig cfg;
  cfg.crystal = CrystalSpec{221, LatticeConstants::cubic(9.0)};
  cfg.target_mode = TargetMode::c_axis_only;
  cfg.n_spots = 60;
  return cfg;
}

}  // namespace

TEST_CASE("reward arithmetic") {
  CHECK(reward(20, 12, 20, 1, false, RewardVariant::dense) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(reward(6, 4, 20, 4, false, RewardVariant::dense) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(reward(7, 7, 20, 3, false, RewardVariant::dense) == doctest::Approx(0.0));
  CHECK(reward(10, 4, 10, 1, true, RewardVariant::dense) == doctest::Approx(160.0).epsilon(1e-12));
  CHECK(reward(10, 4, 10, 2, false, RewardVariant::sparse) == doctest::Approx(-1.0));
  CHECK(reward(10, 4, 10, 2, true, RewardVariant::sparse) == doctest::Approx(99.0));
  CHECK_THROWS(reward(10, 4, 0, 1, false, RewardVariant::dense));
  CHECK_THROWS(reward(10, 4, 10, 0, false, RewardVariant::dense));
}

TEST_CASE("reset: determinism and resampling of solved starts") {
  AlignmentEnv a(cubic_fixed(), 42), b(cubic_fixed(), 42);
  const auto ra = a.reset(), rb = b.reset();
  CHECK(std::equal(ra.observation.values.begin(), ra.observation.values.end(),
                   rb.observation.values.begin()));
  CHECK(ra.info.distance_deg == rb.info.distance_deg);

  AlignmentEnv env(cubic_fixed(), 7);
  for (int i = 0; i < 50; ++i) {
    env.reset();
    CHECK(env.initial_distance_deg() > env.config().tolerance_deg);
  }
}

TEST_CASE("reset: theta0 is uniform on the initial range (KS test)") {
  AlignmentEnv env(cubic_fixed(), 99);
  std::vector<double> theta0;
  const int n = 10000;
  theta0.reserve(n);
  for (int i = 0; i < n; ++i) {
    env.reset();
    theta0.push_back(env.theta0_deg());
  }
  const double d = testsupport::ks_statistic_uniform(theta0, -90.0, 90.0);
  CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));  // alpha = 0.01
}

TEST_CASE("reset: initial distance never exceeds the covering radius (all-cubic mode)") {
  EnvConfig cfg = cubic_fixed();
  cfg.target_mode = TargetMode::all_cubic_high_symmetry;
  const TargetSet targets = target_set(cfg.crystal, cfg.target_mode);

  // Covering radius by dense sphere sweep (Fibonacci lattice).
  double covering = 0.0;
  const int sweep = 200000;
  for (int i = 0; i < sweep; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / sweep;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double az = 2.399963229728653 * i;  // golden angle
    const Vector3 v(r * std::cos(az), r * std::sin(az), z);
    double best = 180.0;
    for (const auto& t : targets.axes)
      best = std::min(best, rad_to_deg(std::acos(std::clamp(std::abs(v.dot(t)), 0.0, 1.0))));
    covering = std::max(covering, best);
  }

  AlignmentEnv env(cfg, 5);
  for (int i = 0; i < 1000; ++i) {
    env.reset();
    CHECK(env.initial_distance_deg() <= covering + 0.1);
  }
}

TEST_CASE("step: zero action leaves the distance unchanged, dense reward 0") {
  AlignmentEnv env(cubic_fixed(), 3);
  const auto r0 = env.reset();
  const auto r1 = env.step({0.0, 0.0});
  CHECK(r1.info.distance_deg == doctest::Approx(r0.info.distance_deg).epsilon(1e-12));
  CHECK(r1.reward == doctest::Approx(0.0));
}

TEST_CASE("static environment: rendering without an action does not change") {
  AlignmentEnv env(cubic_fixed(), 4);
  env.reset();
  const Observation o1 = env.observation();
  const Observation o2 = env.observation();
  CHECK(std::equal(o1.values.begin(), o1.values.end(), o2.values.begin()));
}

TEST_CASE("step: cumulative angles clamp at the total range") {
  EnvConfig cfg = cubic_fixed();
  cfg.max_steps = 50;
  AlignmentEnv env(cfg, 12);
  env.reset();
  EnvInfo info;
  for (int i = 0; i < 13 && env.active(); ++i) info = env.step({1.0, 0.0}).info;
  if (env.active()) {
    CHECK(info.theta_cum_deg == doctest::Approx(120.0));
    info = env.step({1.0, 0.0}).info;
    CHECK(info.theta_cum_deg == doctest::Approx(120.0));  // saturated
  }
}

TEST_CASE("step: out-of-range actions are clipped, non-finite rejected") {
  AlignmentEnv env(cubic_fixed(), 13);
  env.reset();
  const auto r = env.step({5.0, -5.0});
  CHECK(r.info.theta_cum_deg == doctest::Approx(10.0));
  CHECK(r.info.phi_cum_deg == doctest::Approx(-10.0));
  CHECK_THROWS(env.step({std::nan(""), 0.0}));
}

TEST_CASE("episode mechanics: termination, truncation, step-after-end") {
  AlignmentEnv env(cubic_fixed(), 21);
  for (int ep = 0; ep < 20; ++ep) {
    env.reset();
    StepResult last;
    int steps = 0;
    while (env.active()) {
      last = env.step(env.oracle_action());
      ++steps;
      REQUIRE(steps <= env.config().max_steps);
      CHECK_FALSE((last.terminated && last.truncated));
    }
    CHECK(last.terminated);
    CHECK(last.info.distance_deg <= env.config().tolerance_deg);
    CHECK_THROWS_AS(env.step({0, 0}), std::logic_error);
  }
}

TEST_CASE("scripted oracle solves fixed cubic within ceil(90/10)+2 steps") {
  AlignmentEnv env(cubic_fixed(), 31);
  const int episodes = 200;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset();
    int steps = 0;
    bool success = false;
    while (env.active()) {
      const auto r = env.step(env.oracle_action());
      ++steps;
      success = r.terminated;
    }
    CHECK(success);
    CHECK(steps <= 11);
  }
}

TEST_CASE("random actions: episode length capped at max_steps") {
  AlignmentEnv env(cubic_fixed(), 41);
  Rng rng(1);
  for (int ep = 0; ep < 10; ++ep) {
    env.reset();
    int steps = 0;
    while (env.active()) {
      env.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      ++steps;
    }
    CHECK(steps <= 50);
    CHECK(env.record().steps.size() == static_cast<size_t>(steps) + 1);
  }
}

TEST_CASE("per-step rewards match the formula on logged distances") {
  EnvConfig cfg = cubic_fixed();
  AlignmentEnv env(cfg, 51);
  Rng rng(2);
  for (int ep = 0; ep < 10; ++ep) {
    env.reset();
    while (env.active()) env.step({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const EpisodeRecord& rec = env.record();
    const double d0 = rec.steps[0].distance_deg;
    for (size_t t = 1; t < rec.steps.size(); ++t) {
      const bool success = rec.terminated && t + 1 == rec.steps.size();
      const double expect = 100.0 * (rec.steps[t - 1].distance_deg - rec.steps[t].distance_deg) /
                                (d0 * std::sqrt(static_cast<double>(t))) +
                            (success ? 100.0 : 0.0);
      CHECK(rec.steps[t].reward == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("sparse reward variant") {
  EnvConfig cfg = cubic_fixed();
  cfg.reward_variant = RewardVariant::sparse;
  AlignmentEnv env(cfg, 61);
  env.reset();
  StepResult last;
  while (env.active()) last = env.step(env.oracle_action());
  CHECK(last.terminated);
  CHECK(last.reward == doctest::Approx(99.0));
  const auto& rec = env.record().steps;
  for (size_t t = 1; t + 1 < rec.size(); ++t) CHECK(rec[t].reward == doctest::Approx(-1.0));
}

TEST_CASE("curriculum_update") {
  EnvConfig cfg = cubic_fixed();
  cfg.curriculum = CurriculumSchedule{};  // 30 -> 60 -> 90, threshold 0.9
  cfg.curriculum_stage = 0;
  cfg.initial_range_deg = 30.0;

  const EnvConfig same = curriculum_update(cfg, 0.0);
  CHECK(same.curriculum_stage == 0);
  CHECK(same.initial_range_deg == doctest::Approx(30.0));

  const EnvConfig up = curriculum_update(cfg, 1.0);
  CHECK(up.curriculum_stage == 1);
  CHECK(up.initial_range_deg == doctest::Approx(60.0));

  EnvConfig last = curriculum_update(up, 1.0);
  CHECK(last.curriculum_stage == 2);
  const EnvConfig saturated = curriculum_update(last, 1.0);
  CHECK(saturated.curriculum_stage == 2);
  CHECK(saturated.initial_range_deg == doctest::Approx(90.0));

  CHECK_THROWS(curriculum_update(cfg, 1.5));
}

TEST_CASE("invalid configurations are rejected") {
  EnvConfig cfg = cubic_fixed();
  cfg.tolerance_deg = 100.0;  // > initial range
  CHECK_THROWS(AlignmentEnv(cfg, 1));
  EnvConfig bad = cubic_fixed();
  bad.action_scale_deg = 500.0;
  CHECK_THROWS(AlignmentEnv(bad, 1));
  EnvConfig hexbad = cubic_fixed();
  hexbad.crystal = CrystalSpec{191, LatticeConstants::hexagonal(4, 8)};
  hexbad.target_mode = TargetMode::all_cubic_high_symmetry;
  CHECK_THROWS(AlignmentEnv(hexbad, 1));
}

TEST_CASE("domain randomization draws per-episode parameters") {
  EnvConfig cfg = cubic_fixed();
  cfg.randomization = RandomizationConfig::for_system(CrystalSystem::cubic);
  cfg.randomization->space_group_pool = {221, 225, 229};
  AlignmentEnv env(cfg, 71);
  std::set<int> groups;
  std::set<int> counts;
  for (int i = 0; i < 40; ++i) {
    env.reset();
    groups.insert(env.episode_spec().space_group);
    counts.insert(env.episode_spec().space_group);
    CHECK(env.episode_detector().distance_cm >= 4.0);
    CHECK(env.episode_detector().distance_cm <= 6.0);
    CHECK(env.episode_spec().lattice.a >= 3.0);
    CHECK(env.episode_spec().lattice.a <= 15.0);
  }
  CHECK(groups.size() == 3);
}

TEST_CASE("episode record CSV layout") {
  AlignmentEnv env(cubic_fixed(), 81);
  env.reset();
  while (env.active()) env.step(env.oracle_action());
  std::ostringstream os;
  write_episode_csv(os, env.record());
  const std::string text = os.str();
  CHECK(text.rfind("t,a_theta,a_phi,reward,distance_deg,beam_x,beam_y,beam_z\n", 0) == 0);
  // The t=0 row carries no reward.
  std::istringstream is(text);
  std::string header, row0;
  std::getline(is, header);
  std::getline(is, row0);
  int commas = 0;
  size_t reward_field_start = 0;
  for (size_t i = 0, seen = 0; i < row0.size(); ++i)
    if (row0[i] == ',' && ++seen == 3) {
      reward_field_start = i + 1;
      ++commas;
      break;
    }
  CHECK(commas == 1);
  CHECK(row0[reward_field_start] == ',');  // empty reward field at t=0
}

TEST_CASE("trajectory beam directions project inside the unit disc") {
  AlignmentEnv env(cubic_fixed(), 91);
  env.reset();
  while (env.active()) env.step(env.oracle_action());
  for (const auto& s : env.record().steps) {
    CHECK(s.beam_crystal.z() >= 0.0);
    CHECK(std::abs(s.beam_crystal.norm() - 1.0) < 1e-9);
    CHECK(stereographic_project(s.beam_crystal).norm() <= 1.0 + 1e-9);
  }
}

TEST_CASE("env state round-trips through save/load") {
  AlignmentEnv env(cubic_fixed(), 101);
  env.reset();
  env.step({0.3, -0.2});
  std::stringstream buf;
  env.save_state(buf);

  AlignmentEnv restored(cubic_fixed(), 1);  // seed overwritten by load
  restored.load_state(buf);
  CHECK(restored.active() == env.active());
  CHECK(restored.info().distance_deg == env.info().distance_deg);
  CHECK(restored.info().step == env.info().step);

  // Identical continuation.
  const auto a = env.step({0.5, 0.5});
  const auto b = restored.step({0.5, 0.5});
  CHECK(a.reward == b.reward);
  CHECK(a.info.distance_deg == b.info.distance_deg);
  CHECK(std::equal(a.observation.values.begin(), a.observation.values.end(),
                   b.observation.values.begin()));
}
