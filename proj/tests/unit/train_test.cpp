#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "marginnet/certify.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/train.hpp"

using namespace marginnet;

namespace {

Objective quadratic(const Eigen::VectorXd& optimum) {
  return [optimum](const Eigen::VectorXd& p) { return Evaluation{-(p - optimum).squaredNorm(), false}; };
}

// Small and fast; the loop logic is the same as at full scale.
TrainConfig small_config(TrainMode mode, std::uint64_t seed) {
  TrainConfig c;
  c.plant_design = rigid_rod_plant();
  c.plant_sim = flexible_rod_plant();
  c.mode = mode;
  c.nphi = 4;
  c.seed = seed;
  c.iterations = 3;
  c.rl.population = 4;
  c.rl.episodes_per_eval = 1;
  c.rl.eval_episodes = 1;
  c.sim.horizon = 0.2;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(Rng, StateRoundTrip) {
  Rng a(42);
  a.discard(17);
  Rng b = load_rng_state(save_rng_state(a));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}

TEST(EsUpdate, ZeroLearningRateIsIdentity) {
  Rng rng(1);
  const Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  EsParams es{8, 0.1, 0.0, 1};
  const EsStepResult r = es_update(p, quadratic(Eigen::VectorXd::Ones(5)), es, rng);
  EXPECT_EQ(r.params, p);
  EXPECT_EQ(r.evaluations, 8);
}

TEST(EsUpdate, ConvergesOnScalarQuadratic) {
  Rng rng(2);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  EsParams es{64, 0.1, 0.05, 1};
  for (int i = 0; i < 200; ++i) p = es_update(p, quadratic(Eigen::VectorXd::Ones(1)), es, rng).params;
  EXPECT_NEAR(p[0], 1.0, 0.05);
}

TEST(EsUpdate, AntitheticSignInvariance) {
  Rng rng(3);
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 0.2);
  auto dirs = sample_directions(3, 10, rng);
  ASSERT_EQ(dirs.size(), 5u);
  EsParams es{10, 0.05, 0.1, 1};
  const Objective f = quadratic(Eigen::Vector3d(1.0, -2.0, 0.5));
  const Eigen::VectorXd a = es_update(p, f, es, dirs).params;
  for (auto& d : dirs) d = -d;
  const Eigen::VectorXd b = es_update(p, f, es, dirs).params;
  EXPECT_LE((a - b).norm(), 1e-14);
}

TEST(EsUpdate, GradientDirectionUsuallyAscends) {
  Rng rng(4);
  const Eigen::VectorXd opt = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(6);
  EsParams es{32, 0.05, 0.01, 1};
  int positive = 0;
  constexpr int kSteps = 100;
  for (int i = 0; i < kSteps; ++i) {
    const EsStepResult r = es_update(p, quadratic(opt), es, rng);
    if (r.gradient.dot(-2.0 * (p - opt)) > 0.0) ++positive;
    p = r.params;
  }
  EXPECT_GE(positive, 95);
}

TEST(EsUpdate, AllDivergedAborts) {
  Rng rng(5);
  const Eigen::VectorXd p = Eigen::VectorXd::Ones(2);
  const Objective f = [](const Eigen::VectorXd&) { return Evaluation{0.0, true}; };
  const EsStepResult r = es_update(p, f, EsParams{4, 0.1, 1.0, 1}, rng);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.params, p);
}

TEST(EsUpdate, StepNormClip) {
  Rng rng(6);
  const Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
  EsParams es{8, 0.1, 100.0, 1, 0.01};
  const EsStepResult r = es_update(p, quadratic(Eigen::VectorXd::Constant(4, 5.0)), es, rng);
  EXPECT_TRUE(r.clipped);
  EXPECT_NEAR((r.params - p).norm(), 0.01, 1e-14);
}

TEST(Metrics, CsvLayout) {
  EXPECT_STREQ(kMetricsHeader,
               "iteration,env_steps,mean_eval_reward,std_eval_reward,cert_feasible_pre_projection,"
               "projection_applied,projection_distance,wall_time_s");
  MetricsRow r;
  r.iteration = 3;
  r.env_steps = 100;
  r.mean_eval_reward = 1.5;
  r.std_eval_reward = 0.25;
  r.wall_time_s = 2.0;
  EXPECT_EQ(to_csv(r), "3,100,1.5,0.25,,,,2");
  r.cert_feasible_pre_projection = 0;
  r.projection_applied = 1;
  r.projection_distance = 0.5;
  EXPECT_EQ(to_csv(r), "3,100,1.5,0.25,0,1,0.5,2");
}

TEST(TrainConfig, Validation) {
  TrainConfig c = small_config(TrainMode::Constrained, 0);
  c.nk = 3;
  EXPECT_THROW(c.validate(), DimensionError);
  c.mode = TrainMode::UnconstrainedBaseline;
  EXPECT_NO_THROW(c.validate());
  c.rl.population = 5;
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_EQ(small_config(TrainMode::LtiBaseline, 0).controller_dims().nphi, 0);
  EXPECT_EQ(train_mode_from_string(to_string(TrainMode::LtiBaseline)), TrainMode::LtiBaseline);
}

TEST(Initialize, ConstrainedStartsCertified) {
  TrainConfig c = small_config(TrainMode::Constrained, 1);
  c.nphi = 16;
  Rng rng(c.seed);
  const Initialization init = initialize(c, rng);
  ASSERT_TRUE(init.certificate.has_value());
  EXPECT_EQ(certify(c.plant_design, init.theta, c.margin).status, CertifyStatus::Certified);
}

TEST(Initialize, ZeroAlphaStabilizes) {
  TrainConfig c = small_config(TrainMode::Constrained, 2);
  c.margin = {0.0, 0.0};
  Rng rng(c.seed);
  const Initialization init = initialize(c, rng);
  EXPECT_EQ(certify(c.plant_design, init.theta, c.margin).status, CertifyStatus::Certified);
}

TEST(Initialize, UnconstrainedHasNoCertificate) {
  const TrainConfig c = small_config(TrainMode::UnconstrainedBaseline, 3);
  Rng rng(c.seed);
  const Initialization init = initialize(c, rng);
  EXPECT_FALSE(init.certificate.has_value());
  EXPECT_TRUE(init.X.isIdentity());
}

TEST(Initialize, UnattainableMarginSuggestsSmallerAlpha) {
  TrainConfig c = small_config(TrainMode::Constrained, 4);
  c.margin = {2.5, 0.0};
  Rng rng(c.seed);
  try {
    initialize(c, rng);
    FAIL() << "expected MarginInfeasibleError";
  } catch (const MarginInfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("smaller alpha"), std::string::npos);
  }
}

TEST(Train, ConstrainedEveryIterationCertified) {
  TrainConfig c = small_config(TrainMode::Constrained, 5);
  c.checkpoint_every = 1;
  int checked = 0;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const Checkpoint& ck) {
    ASSERT_TRUE(ck.certificate.has_value());
    EXPECT_TRUE(verify_certificate(c.plant_design, ck.theta, *ck.certificate));
    EXPECT_EQ(certify(c.plant_design, ck.theta, c.margin).status, CertifyStatus::Certified);
    ++checked;
  };
  const TrainResult r = train(c, cb);
  EXPECT_EQ(checked, 3);
  ASSERT_EQ(r.metrics.size(), 4u);
  for (std::size_t i = 1; i < r.metrics.size(); ++i) {
    EXPECT_GT(r.metrics[i].env_steps, r.metrics[i - 1].env_steps);
    if (*r.metrics[i].projection_applied == 1) EXPECT_EQ(*r.metrics[i].cert_feasible_pre_projection, 0);
  }
}

TEST(Train, UnconstrainedLeavesCertFieldsBlank) {
  const TrainResult r = train(small_config(TrainMode::UnconstrainedBaseline, 6));
  for (const MetricsRow& m : r.metrics) {
    EXPECT_FALSE(m.cert_feasible_pre_projection.has_value());
    EXPECT_FALSE(m.projection_applied.has_value());
  }
  EXPECT_FALSE(r.final.certificate.has_value());
}

TEST(Train, ZeroLearningRateNeverProjects) {
  TrainConfig c = small_config(TrainMode::Constrained, 7);
  c.rl.learning_rate = 0.0;
  const TrainResult r = train(c);
  Rng rng(c.seed);
  const Initialization init = initialize(c, rng);
  EXPECT_EQ(flatten(r.final.theta), flatten(init.theta));
  for (std::size_t i = 1; i < r.metrics.size(); ++i) EXPECT_EQ(*r.metrics[i].projection_applied, 0);
}

TEST(Train, LtiWithoutProjectionEqualsUnconstrainedLinear) {
  TrainConfig a = small_config(TrainMode::UnconstrainedBaseline, 8);
  a.nphi = 0;
  TrainConfig b = small_config(TrainMode::LtiBaseline, 8);
  b.enforce = false;
  const TrainResult ra = train(a);
  const TrainResult rb = train(b);
  ASSERT_EQ(ra.metrics.size(), rb.metrics.size());
  for (std::size_t i = 0; i < ra.metrics.size(); ++i) {
    EXPECT_EQ(ra.metrics[i].mean_eval_reward, rb.metrics[i].mean_eval_reward);
  }
  EXPECT_EQ(flatten(ra.final.theta), flatten(rb.final.theta));
}

TEST(Train, ResumeReplaysMetrics) {
  TrainConfig c = small_config(TrainMode::Constrained, 9);
  c.iterations = 4;
  c.checkpoint_every = 2;
  std::optional<Checkpoint> mid;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const Checkpoint& ck) {
    if (ck.iteration == 2) mid = ck;
  };
  const TrainResult full = train(c, cb);
  ASSERT_TRUE(mid.has_value());
  const TrainResult rest = train(c, {}, es_rl_step, mid);
  ASSERT_EQ(rest.metrics.size(), 2u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(rest.metrics[i].iteration, full.metrics[3 + i].iteration);
    EXPECT_EQ(rest.metrics[i].mean_eval_reward, full.metrics[3 + i].mean_eval_reward);
    EXPECT_EQ(rest.metrics[i].env_steps, full.metrics[3 + i].env_steps);
  }
  EXPECT_EQ(flatten(rest.final.theta), flatten(full.final.theta));
}

TEST(Train, CustomStepIsPluggable) {
  TrainConfig c = small_config(TrainMode::UnconstrainedBaseline, 10);
  int calls = 0;
  const RlStep step = [&](const RinnParams& t, RlContext& ctx) {
    ++calls;
    ctx.env_steps_taken = 1;
    return t;
  };
  const TrainResult r = train(c, {}, step);
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(r.final.env_steps, 3u);
}
