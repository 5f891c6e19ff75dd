#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "instances.hpp"
#include "marginnet/certify.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/sim.hpp"
#include "oracle_values.hpp"

using namespace marginnet;
using testing_support::oracle_lti_controller;
using testing_support::oracle_rinn_controller;
using testing_support::to_vector;

namespace {

Eigen::VectorXd free_response(double dt, double T) {
  const PlantModel p = flexible_rod_plant();
  SimConfig cfg;
  cfg.dt = dt;
  cfg.horizon = T;
  const Trajectory tr = rollout(p, RinnParams::zeros({0, 0, 1, 1}), cfg, {}, to_vector(oracle::kFlexX0));
  return tr.final_plant_state;
}

}  // namespace

TEST(Rk4, FreeResponseMatchesExpm) {
  const Eigen::VectorXd ref = to_vector(oracle::kFlexExpmHalfX0);
  const double e1 = (free_response(1e-3, 0.5) - ref).norm();
  const double e2 = (free_response(5e-4, 0.5) - ref).norm();
  EXPECT_LT(e1, 2e-2 * ref.norm());
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Rk4, ScalarExponential) {
  const VectorField f = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) -> Eigen::VectorXd { return -x; };
  Eigen::VectorXd x = Eigen::VectorXd::Ones(1);
  for (int i = 0; i < 100; ++i) x = rk4_step(f, x, Eigen::VectorXd(0), 0.01, i);
  EXPECT_NEAR(x[0], std::exp(-1.0), 1e-9);
  EXPECT_THROW(rk4_step(f, x, Eigen::VectorXd(0), 0.0), DomainError);
}

TEST(Reward, PerStepBounds) {
  EXPECT_DOUBLE_EQ(reward(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(1)), 2.0);
  EXPECT_GT(reward(Eigen::VectorXd::Constant(4, 10.0), Eigen::VectorXd::Constant(1, 10.0)), 0.0);
}

TEST(Rollout, DefaultEpisodeTotalsBounded) {
  const PlantModel p = flexible_rod_plant();
  const SimConfig cfg;
  EXPECT_EQ(cfg.steps(), 2000);
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Eigen::VectorXd x0 = sample_initial_state(cfg, p.n_p(), s);
    const Trajectory tr = rollout(p, RinnParams::zeros({2, 0, 1, 1}), cfg, {}, x0);
    EXPECT_EQ(tr.size(), 2000u);
    EXPECT_GT(tr.total_reward, 0.0);
    EXPECT_LE(tr.total_reward, 4000.0);
    for (double r : tr.rewards) {
      EXPECT_GT(r, 0.0);
      EXPECT_LE(r, 2.0);
    }
  }
}

TEST(Rollout, Deterministic) {
  const PlantModel p = flexible_rod_plant();
  SimConfig cfg;
  cfg.seed = 7;
  RolloutOptions o;
  o.exploration_noise = 0.5;
  o.noise_seed = 3;
  const auto pert = PerturbationSpec::time_varying(0.3, 9);
  const Trajectory a = rollout(p, oracle_rinn_controller(), cfg, pert, o);
  const Trajectory b = rollout(p, oracle_rinn_controller(), cfg, pert, o);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.plant_states[i], b.plant_states[i]);
    ASSERT_EQ(a.u_sat[i], b.u_sat[i]);
  }
  EXPECT_EQ(a.total_reward, b.total_reward);
  o.noise_seed = 4;
  EXPECT_NE(rollout(p, oracle_rinn_controller(), cfg, pert, o).total_reward, a.total_reward);
}

TEST(Rollout, UnitGainIsNominal) {
  const PlantModel p = rigid_rod_plant();
  SimConfig cfg;
  cfg.seed = 2;
  const Trajectory a = rollout(p, oracle_lti_controller(), cfg, PerturbationSpec::none());
  const Trajectory b = rollout(p, oracle_lti_controller(), cfg, PerturbationSpec::constant_gain(1.0));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.plant_states[i], b.plant_states[i]);
}

TEST(Rollout, SaturationClipsInput) {
  const PlantModel p = rigid_rod_plant();
  RinnParams t = RinnParams::zeros({0, 0, 1, 1});
  t.D_kuy(0, 0) = -1000.0;
  SimConfig cfg;
  cfg.horizon = 0.1;
  const Trajectory tr = rollout(p, t, cfg, {}, Eigen::Vector2d(1.0, 0.0));
  EXPECT_DOUBLE_EQ(tr.u_raw[0][0], -1000.0);
  EXPECT_DOUBLE_EQ(tr.u_sat[0][0], -20.0);
}

TEST(Rollout, DivergenceCarriesPartialTrajectory) {
  const PlantModel p = rigid_rod_plant();
  RinnParams t = RinnParams::zeros({0, 0, 1, 1});
  t.D_kuy(0, 0) = 1000.0;
  SimConfig cfg;
  cfg.input_saturation = std::numeric_limits<double>::infinity();
  try {
    rollout(p, t, cfg, {}, Eigen::Vector2d(1.0, 0.0));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    ASSERT_NE(e.partial(), nullptr);
    EXPECT_GT(e.step(), 0);
    EXPECT_EQ(e.partial()->size(), static_cast<std::size_t>(e.step()) + 1);
  }
}

TEST(Rollout, TrajectoryCsvHeader) {
  SimConfig cfg;
  cfg.horizon = 0.003;
  const Trajectory tr = rollout(flexible_rod_plant(), RinnParams::zeros({2, 1, 1, 1}), cfg);
  std::ostringstream os;
  tr.write_csv(os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "t,x1,x2,x3,x4,xk1,xk2,u_raw,u_sat,reward");
  int rows = 0;
  for (std::string line; std::getline(is, line);) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Perturbation, DeltaGain) {
  EXPECT_DOUBLE_EQ(delta_gain(0.0, 0.3), 1.0);
  const GainBounds g = gain_bounds({0.353, 0.0});
  EXPECT_NEAR(delta_gain(-0.353, 0.0), g.gamma_min, 1e-14);
  EXPECT_NEAR(delta_gain(0.353, 0.0), *g.gamma_max, 1e-14);
  EXPECT_THROW(delta_gain(2.0, 0.0), DomainError);
}

TEST(Perturbation, WaveformBound) {
  const DeltaWaveform w(2, 0.4, 2.0, 1e-3, 11);
  double peak = 0.0;
  for (int k = 0; k < 2000; ++k) peak = std::max(peak, w(k * 1e-3).cwiseAbs().maxCoeff());
  EXPECT_NEAR(peak, 0.95 * 0.4, 1e-12);
}

TEST(InitialState, WithinDefaultRanges) {
  const auto r4 = default_init_ranges(4);
  EXPECT_DOUBLE_EQ(r4[1].hi, 0.44);
  EXPECT_DOUBLE_EQ(r4[3].lo, -2.0);
  const auto r2 = default_init_ranges(2);
  EXPECT_DOUBLE_EQ(r2[1].hi, 0.25);
  SimConfig cfg;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Eigen::VectorXd x = sample_initial_state(cfg, 4, s);
    for (int i = 0; i < 4; ++i) {
      EXPECT_GE(x[i], r4[i].lo);
      EXPECT_LE(x[i], r4[i].hi);
    }
  }
}

TEST(StabilityProbe, CertifiedControllerDecays) {
  const PlantModel p = rigid_rod_plant();
  const RinnParams t = oracle_rinn_controller();
  ASSERT_EQ(certify(p, t, {0.353, 0.0}).status, CertifyStatus::Certified);
  ProbeOptions o;
  o.gains = {0.71, 1.0, 1.42};
  const ProbeReport r = stability_probe(p, t, {0.353, 0.0}, 0, 10.0, o);
  ASSERT_EQ(r.samples.size(), 3u);
  EXPECT_LT(r.worst_ratio, 1.0);
  const ProbeReport sampled = stability_probe(p, t, {0.353, 0.0}, 4, 10.0);
  EXPECT_EQ(sampled.samples.size(), 8u);
  EXPECT_LT(sampled.worst_ratio, 1.0);
}

TEST(StabilityProbe, NominalDiskSamplesUnitGainOnly) {
  const ProbeReport r = stability_probe(rigid_rod_plant(), oracle_lti_controller(), {0.0, 0.0}, 5, 1.0);
  ASSERT_EQ(r.samples.size(), 1u);
  EXPECT_EQ(r.samples[0].perturbation.gamma, 1.0);
}

TEST(StabilityProbe, SignFlipIsReported) {
  ProbeOptions o;
  o.gains = {-1.0};
  const ProbeReport r = stability_probe(rigid_rod_plant(), oracle_lti_controller(), {0.353, 0.0}, 0, 10.0, o);
  EXPECT_GE(r.worst_ratio, 1.0);
}
