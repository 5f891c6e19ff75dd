#include <filesystem>

#include <gtest/gtest.h>

#include "instances.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/io.hpp"

using namespace marginnet;
using io::json;

TEST(Io, MatrixRoundTripAndShapes) {
  const Eigen::MatrixXd m = (Eigen::MatrixXd(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  EXPECT_EQ(io::matrix_from_json(io::matrix_to_json(m), "m"), m);
  EXPECT_EQ(io::matrix_from_json(io::matrix_to_json(Eigen::MatrixXd(0, 4)), 0, 4, "e").cols(), 4);
  EXPECT_THROW(io::matrix_from_json(io::matrix_to_json(m), 3, 2, "m"), DimensionError);
  EXPECT_THROW(io::matrix_from_json(json::parse("[[1, 2], [3]]"), "ragged"), DimensionError);
}

TEST(Io, PlantByNameAndMatrices) {
  const PlantModel f = io::plant_from_json("flexible-rod");
  EXPECT_EQ(f.A, flexible_rod_plant().A);
  EXPECT_EQ(io::load_plant("rigid").A, rigid_rod_plant().A);
  RodParameters p;
  p.damping = 0.1;
  const PlantModel g = io::plant_from_json(json{{"model", "flexible-rod"}, {"params", {{"damping", 0.1}}}});
  EXPECT_EQ(g.A, flexible_rod_plant(p).A);
  const PlantModel back = io::plant_from_json(io::plant_to_json(f));
  EXPECT_EQ(back.A, f.A);
  EXPECT_EQ(back.B, f.B);
  EXPECT_EQ(back.C, f.C);
  EXPECT_THROW(io::plant_from_json("pendulum"), DomainError);
}

TEST(Io, ControllerSchema) {
  const RinnParams t = testing_support::oracle_rinn_controller();
  const json j = io::controller_to_json(t);
  EXPECT_EQ(j.at("dims").at("nphi"), 3);
  EXPECT_EQ(j.at("activation"), "tanh");
  ASSERT_TRUE(j.contains("matrices"));
  EXPECT_EQ(j.at("matrices").at("A_k").size(), 2u);
  EXPECT_EQ(flatten(io::controller_from_json(j)), flatten(t));
  // LTI controller: n_phi = 0 blocks survive the round trip.
  const RinnParams lti = testing_support::oracle_lti_controller();
  const RinnParams lback = io::controller_from_json(io::controller_to_json(lti));
  EXPECT_EQ(lback.dims, lti.dims);
  EXPECT_EQ(lback.B_kw.rows(), 2);
  EXPECT_EQ(lback.B_kw.cols(), 0);
}

TEST(Io, CertificateAndCheckpoint) {
  Certificate c;
  c.X = testing_support::random_spd(4, 0.5, 2.0, 1);
  c.multipliers = {Eigen::VectorXd::Constant(1, 0.7), Eigen::VectorXd::LinSpaced(3, 0.1, 0.3), 0.353};
  c.margin = {0.353, 0.0};
  const json cj = io::certificate_to_json(c);
  for (const char* k : {"X", "lambda_p", "lambda_k", "alpha", "sigma"}) EXPECT_TRUE(cj.contains(k)) << k;
  const Certificate cb = io::certificate_from_json(cj);
  EXPECT_EQ(cb.X, c.X);
  EXPECT_EQ(cb.multipliers.lambda_k, c.multipliers.lambda_k);

  Checkpoint ck{7, testing_support::oracle_rinn_controller(), c, "state", 1234};
  const Checkpoint back = io::checkpoint_from_json(io::checkpoint_to_json(ck));
  EXPECT_EQ(back.iteration, 7);
  EXPECT_EQ(back.env_steps, 1234u);
  EXPECT_EQ(back.rng_state, "state");
  ASSERT_TRUE(back.certificate.has_value());
  ck.certificate.reset();
  EXPECT_TRUE(io::checkpoint_to_json(ck).at("certificate").is_null());
  EXPECT_FALSE(io::checkpoint_from_json(io::checkpoint_to_json(ck)).certificate.has_value());
}

TEST(Io, TrainConfigDefaultsAndRoundTrip) {
  const TrainConfig d = io::train_config_from_json(json::object());
  EXPECT_EQ(d.plant_design.n_p(), 2);
  EXPECT_EQ(d.plant_sim.n_p(), 4);
  EXPECT_DOUBLE_EQ(d.margin.alpha, 0.353);
  EXPECT_DOUBLE_EQ(d.rl.learning_rate, 5e-5);
  EXPECT_DOUBLE_EQ(io::train_config_from_json(json{{"mode", "lti-baseline"}}).rl.learning_rate, 1e-4);

  TrainConfig c = d;
  c.iterations = 7;
  c.seed = 99;
  c.mode = TrainMode::UnconstrainedBaseline;
  c.sim.input_saturation = std::numeric_limits<double>::infinity();
  c.enforce = false;
  const TrainConfig back = io::train_config_from_json(io::train_config_to_json(c));
  EXPECT_EQ(back.iterations, 7);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.mode, TrainMode::UnconstrainedBaseline);
  EXPECT_TRUE(std::isinf(back.sim.input_saturation));
  EXPECT_FALSE(back.enforce);
  EXPECT_EQ(back.plant_sim.A, c.plant_sim.A);
}

TEST(Io, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "marginnet_io_test.json";
  io::write_json_file(path, json{{"a", 1}});
  EXPECT_EQ(io::read_json_file(path).at("a"), 1);
  std::filesystem::remove(path);
  EXPECT_THROW(io::read_json_file(path), DomainError);
}
