#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "instances.hpp"
#include "marginnet/controller.hpp"
#include "marginnet/errors.hpp"

using namespace marginnet;
using testing_support::random_theta;

TEST(Activation, SectorAndSlope) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (Activation k : {Activation::Tanh, Activation::Relu}) {
    EXPECT_EQ(activate(k, 0.0), 0.0);
    for (int i = 0; i < 10000; ++i) {
      const double a = n(rng), b = n(rng);
      EXPECT_GE(activate(k, a) * a, 0.0);
      EXPECT_LE(std::abs(activate(k, a) - activate(k, b)), std::abs(a - b));
    }
  }
  EXPECT_EQ(activation_from_string(to_string(Activation::Relu)), Activation::Relu);
  EXPECT_THROW(activation_from_string("sigmoid"), DomainError);
}

TEST(Forward, ExplicitSingleNeuron) {
  RinnParams t = RinnParams::zeros({0, 1, 1, 1});
  t.D_kvy(0, 0) = 0.5;
  t.D_kuw(0, 0) = 1.0;
  const ControllerOutput o = forward(t, Eigen::VectorXd(0), Eigen::VectorXd::Ones(1));
  EXPECT_NEAR(o.w_k[0], std::tanh(0.5), 1e-15);
  EXPECT_NEAR(o.w_k[0], 0.46211715, 1e-8);
  EXPECT_NEAR(o.u_tilde[0], std::tanh(0.5), 1e-15);
}

TEST(Forward, LinearPathOnlyIsLti) {
  RinnParams t = random_theta({2, 4, 1, 1}, 0.5, 2);
  t.B_kw.setZero();
  t.C_kv.setZero();
  t.D_kvw.setZero();
  t.D_kvy.setZero();
  t.D_kuw.setZero();
  const Eigen::Vector2d xk(0.3, -0.7);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 1.3);
  const ControllerOutput o = forward(t, xk, y);
  EXPECT_TRUE(o.w_k.isZero());
  EXPECT_NEAR((o.x_k_dot - (t.A_k * xk + t.B_ky * y)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((o.u_tilde - (t.C_ku * xk + t.D_kuy * y)).norm(), 0.0, 1e-15);
}

TEST(Forward, OriginIsEquilibrium) {
  const RinnParams t = random_theta({2, 5, 1, 1}, 0.1, 4);
  const ControllerOutput o = forward(t, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1));
  EXPECT_TRUE(o.x_k_dot.isZero());
  EXPECT_TRUE(o.u_tilde.isZero());
  EXPECT_TRUE(o.w_k.isZero());
}

TEST(SolveActivations, TriangularMatchesFixedPoint) {
  RinnParams t = random_theta({0, 6, 1, 1}, 0.8, 5);
  t.D_kvw = t.D_kvw.triangularView<Eigen::StrictlyLower>();
  ASSERT_TRUE(is_strictly_lower_triangular(t.D_kvw));
  const Eigen::VectorXd off = Eigen::VectorXd::LinSpaced(6, -1.0, 1.0);
  const Eigen::VectorXd w = solve_activations(t, off);
  // Full-matrix fixed point iteration from zero as the reference.
  Eigen::VectorXd ref = Eigen::VectorXd::Zero(6);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd v = t.D_kvw * ref + off;
    for (int i = 0; i < 6; ++i) ref[i] = std::tanh(v[i]);
  }
  EXPECT_LE((w - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SolveActivations, WellPosedDenseConverges) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    RinnParams t = random_theta({0, 8, 1, 1}, 0.25, 100 + trial);
    if (!well_posed(t, Eigen::VectorXd::Ones(8))) continue;
    for (Activation k : {Activation::Tanh, Activation::Relu}) {
      t.activation = k;
      Eigen::VectorXd off(8);
      for (int i = 0; i < 8; ++i) off[i] = 3.0 * n(rng);
      const Eigen::VectorXd w = solve_activations(t, off);
      Eigen::VectorXd r = t.D_kvw * w + off;
      for (int i = 0; i < 8; ++i) r[i] = activate(k, r[i]) - w[i];
      EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(SolveActivations, IllPosedThrows) {
  RinnParams t = RinnParams::zeros({0, 1, 1, 1}, Activation::Relu);
  t.D_kvw(0, 0) = 1.0;  // w = relu(w + 1) has no solution
  EXPECT_THROW(solve_activations(t, Eigen::VectorXd::Ones(1)), WellPosednessError);
}

TEST(WellPosed, Examples) {
  RinnParams t = RinnParams::zeros({0, 3, 1, 1});
  EXPECT_TRUE(well_posed(t, Eigen::VectorXd::Ones(3)));
  t.D_kvw = 2.0 * Eigen::MatrixXd::Identity(3, 3);
  EXPECT_FALSE(well_posed(t, Eigen::VectorXd::Ones(3)));
  for (int s = 0; s < 10; ++s) {
    RinnParams r = random_theta({0, 5, 1, 1}, 1.0, 40 + s);
    r.D_kvw = r.D_kvw.triangularView<Eigen::StrictlyLower>();
    r.D_kvw *= 0.5;
    // With zero diagonal He(D) - 2I < 0 iff ||He(D)|| < 2.
    const bool expect = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(r.D_kvw + r.D_kvw.transpose())
                            .eigenvalues()
                            .maxCoeff() < 2.0 - 1e-10;
    EXPECT_EQ(well_posed(r, Eigen::VectorXd::Ones(5)), expect);
  }
  EXPECT_FALSE(well_posed(RinnParams::zeros({0, 2, 1, 1}), Eigen::Vector2d(1.0, 0.0)));
}

TEST(EmbedFeedforward, SingleLayer) {
  const Eigen::MatrixXd W0 = (Eigen::MatrixXd(2, 1) << 1.0, -2.0).finished();
  const Eigen::MatrixXd W1 = (Eigen::MatrixXd(1, 2) << 0.5, 0.25).finished();
  const std::vector<Eigen::MatrixXd> w{W0, W1};
  const RinnParams t = embed_feedforward(w);
  EXPECT_EQ(t.dims.nk, 0);
  EXPECT_TRUE(t.D_kvw.isZero());
  EXPECT_TRUE(t.D_kvy.isApprox(W0));
  EXPECT_TRUE(t.D_kuw.isApprox(W1));
  EXPECT_TRUE(t.D_kuy.isZero());
}

TEST(EmbedFeedforward, TwoLayerIdentity) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(1, 1);
  const std::vector<Eigen::MatrixXd> w{I, I, I};
  const RinnParams t = embed_feedforward(w);
  const ControllerOutput o = forward(t, Eigen::VectorXd(0), Eigen::VectorXd::Constant(1, 0.5));
  EXPECT_NEAR(o.u_tilde[0], std::tanh(std::tanh(0.5)), 1e-14);
  EXPECT_NEAR(o.u_tilde[0], 0.431808, 1e-6);
}

TEST(EmbedFeedforward, BlockTemplateThreeLayers) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  auto rnd = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = n(rng);
    return m;
  };
  const std::vector<Eigen::MatrixXd> w{rnd(3, 2), rnd(4, 3), rnd(2, 4), rnd(1, 2)};
  const RinnParams t = embed_feedforward(w);
  ASSERT_EQ(t.dims.nphi, 9);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(9, 9);
  D.block(3, 0, 4, 3) = w[1];
  D.block(7, 3, 2, 4) = w[2];
  EXPECT_TRUE(t.D_kvw.isApprox(D));
  Eigen::MatrixXd Dy = Eigen::MatrixXd::Zero(9, 2);
  Dy.topRows(3) = w[0];
  EXPECT_TRUE(t.D_kvy.isApprox(Dy));
  Eigen::MatrixXd Du = Eigen::MatrixXd::Zero(1, 9);
  Du.rightCols(2) = w[3];
  EXPECT_TRUE(t.D_kuw.isApprox(Du));
  // Forward matches the explicit network.
  const Eigen::Vector2d y(0.3, -0.8);
  Eigen::VectorXd h = y;
  for (int l = 0; l < 3; ++l) h = (w[l] * h).array().tanh().matrix();
  EXPECT_NEAR((forward(t, Eigen::VectorXd(0), y).u_tilde - w[3] * h).norm(), 0.0, 1e-13);
  EXPECT_THROW(embed_feedforward(std::vector<Eigen::MatrixXd>{rnd(3, 2), rnd(1, 2)}), DimensionError);
}

TEST(Flatten, RoundTripAndCount) {
  const ControllerDims d{2, 3, 1, 1};
  EXPECT_EQ(parameter_count(d), 4u + 6 + 2 + 6 + 9 + 3 + 2 + 3 + 1);
  const RinnParams t = random_theta(d, 1.0, 12);
  const Eigen::VectorXd p = flatten(t);
  EXPECT_EQ(p.size(), 36);
  const RinnParams back = unflatten(p, d);
  EXPECT_EQ(flatten(back), p);
  EXPECT_EQ(p[0], t.A_k(0, 0));
  EXPECT_EQ(p[1], t.A_k(0, 1));
  EXPECT_TRUE(flatten(unflatten(Eigen::VectorXd::Zero(36), d)).isZero());
  EXPECT_THROW(unflatten(Eigen::VectorXd::Zero(35), d), DimensionError);
}
