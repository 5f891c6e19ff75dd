#include <random>

#include <gtest/gtest.h>

#include "instances.hpp"
#include "marginnet/certify.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/synthesis.hpp"

using namespace marginnet;
using testing_support::CertifiedInstance;
using testing_support::random_certified_instance;
using testing_support::random_spd;
using testing_support::random_theta;

namespace {

const DiskMargin kMargin{0.353, 0.0};

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

RinnParams perturbed(const RinnParams& t, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd p = flatten(t);
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += n(rng);
  return unflatten(p, t.dims, t.activation);
}

class SynthesisTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { instance_ = new CertifiedInstance(random_certified_instance(3, 4, kMargin)); }
  static void TearDownTestSuite() { delete instance_; }
  static CertifiedInstance* instance_;
  const PlantModel plant_ = rigid_rod_plant();
};

CertifiedInstance* SynthesisTest::instance_ = nullptr;

}  // namespace

TEST(FactorCoupling, ReproducesCoupling) {
  const Eigen::MatrixXd R = random_spd(3, 0.5, 2.0, 1);
  const Eigen::MatrixXd S = random_spd(3, 0.1, 0.4, 2);
  const ReconFactors f = factor_coupling(R, S);
  EXPECT_LE((f.V * f.U.transpose() - (Eigen::MatrixXd::Identity(3, 3) - R * S)).norm(), 1e-12);
}

TEST(ConstructThetaHat, IdentityXIsDegenerate) {
  const RinnParams t = random_theta({2, 3, 1, 1}, 0.1, 5);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_THROW(construct_theta_hat(t, X, Eigen::VectorXd::Ones(3), rigid_rod_plant()), DegenerateCertificateError);
  ConstructOptions o;
  o.regularize_degenerate = true;
  const ThetaHatConstruction c = construct_theta_hat(t, X, Eigen::VectorXd::Ones(3), rigid_rod_plant(), o);
  EXPECT_TRUE(c.regularized);
  c.theta_hat.validate();
}

TEST(ConstructThetaHat, RequiresMatchingStateSize) {
  const RinnParams t = random_theta({3, 2, 1, 1}, 0.1, 6);
  EXPECT_THROW(construct_theta_hat(t, random_spd(5, 1, 2, 1), Eigen::VectorXd::Ones(2), rigid_rod_plant()),
               DimensionError);
}

TEST_F(SynthesisTest, RoundTripWithHint) {
  const auto& c = instance_->certificate;
  const ThetaHatConstruction th =
      construct_theta_hat(instance_->theta, c.X, c.multipliers.lambda_k, plant_);
  const Reconstruction r = reconstruct(th.theta_hat, plant_, th.factors);
  EXPECT_LE(rel(flatten(r.theta), flatten(instance_->theta)), 1e-9);
  EXPECT_LE(rel(r.X, c.X), 1e-9);
  EXPECT_LE(rel(r.lambda_k, c.multipliers.lambda_k), 1e-12);
}

TEST_F(SynthesisTest, RoundTripWithoutHintPreservesCertificate) {
  const auto& c = instance_->certificate;
  const ThetaHatConstruction th = construct_theta_hat(instance_->theta, c.X, c.multipliers.lambda_k, plant_);
  const Reconstruction r = reconstruct(th.theta_hat, plant_);
  // Another state basis: same certificate value up to similarity.
  MultiplierSet ms{c.multipliers.lambda_p, r.lambda_k, kMargin.alpha};
  const Eigen::MatrixXd L = certification_lmi(closed_loop(to_lft(plant_, kMargin), r.theta), r.X, ms);
  EXPECT_LE(sdp::max_eigenvalue(L), 1e-8);
}

TEST_F(SynthesisTest, ExpandedLmiNegativeAtCertificate) {
  const auto& c = instance_->certificate;
  const ThetaHatConstruction th = construct_theta_hat(instance_->theta, c.X, c.multipliers.lambda_k, plant_);
  const Eigen::MatrixXd E = expanded_lmi(th.theta_hat, c.multipliers.lambda_p, kMargin, plant_);
  EXPECT_EQ(E.rows(), 2 + 2 + 1 + 4 + 1);
  EXPECT_LE(sdp::max_eigenvalue(E), 1e-9);
}

TEST_F(SynthesisTest, ProjectThetaHatOfFeasiblePointIsSmallMove) {
  const auto& c = instance_->certificate;
  const ThetaHatConstruction th = construct_theta_hat(instance_->theta, c.X, c.multipliers.lambda_k, plant_);
  const ThetaHat p = project_theta_hat(th.theta_hat, c.multipliers.lambda_p, kMargin, plant_);
  EXPECT_LE(sdp::max_eigenvalue(expanded_lmi(p, c.multipliers.lambda_p, kMargin, plant_)), 0.0);
  EXPECT_LE((p.flatten() - th.theta_hat.flatten()).norm(), 1e-2 * th.theta_hat.flatten().norm());
}

TEST_F(SynthesisTest, ProjectThetaHatInfeasibleMargin) {
  const auto& c = instance_->certificate;
  const ThetaHatConstruction th = construct_theta_hat(instance_->theta, c.X, c.multipliers.lambda_k, plant_);
  EXPECT_THROW(project_theta_hat(th.theta_hat, c.multipliers.lambda_p, {2.5, 0.0}, plant_), MarginInfeasibleError);
}

TEST_F(SynthesisTest, SchurFormMatchesCertificationLmi) {
  const auto& c = instance_->certificate;
  const Eigen::MatrixXd S = schur_projection_lmi(instance_->theta, c.X, c.multipliers.lambda_p,
                                                 c.multipliers.lambda_k, kMargin, plant_);
  const Eigen::MatrixXd L = certification_lmi(closed_loop(to_lft(plant_, kMargin), instance_->theta), c.X,
                                              c.multipliers);
  const Eigen::Index n = L.rows(), m = S.rows() - n;
  const Eigen::MatrixXd B = S.bottomLeftCorner(m, n);
  EXPECT_TRUE(S.bottomRightCorner(m, m).isApprox(-Eigen::MatrixXd::Identity(m, m)));
  EXPECT_LE((S.topLeftCorner(n, n) + B.transpose() * B - L).norm(), 1e-10);
}

TEST_F(SynthesisTest, ProjectThetaKeepsFeasiblePoint) {
  const auto& c = instance_->certificate;
  const RinnParams p = project_theta(instance_->theta, c.X, c.multipliers.lambda_p, c.multipliers.lambda_k,
                                     kMargin, plant_);
  EXPECT_LE((flatten(p) - flatten(instance_->theta)).norm(), 1e-5);
}

TEST_F(SynthesisTest, ProjectThetaRepairsNearbyPoint) {
  const auto& c = instance_->certificate;
  const RinnParams bad = perturbed(instance_->theta, 0.05, 17);
  const RinnParams p = project_theta(bad, c.X, c.multipliers.lambda_p, c.multipliers.lambda_k, kMargin, plant_);
  const Eigen::MatrixXd L = certification_lmi(closed_loop(to_lft(plant_, kMargin), p), c.X, c.multipliers);
  EXPECT_LE(sdp::max_eigenvalue(L), 0.0);
  // No farther than the known feasible point.
  EXPECT_LE((flatten(p) - flatten(bad)).norm(), (flatten(instance_->theta) - flatten(bad)).norm() + 1e-6);
}

TEST_F(SynthesisTest, EnforceMarginCertifiesDecertifiedPoints) {
  const auto& c = instance_->certificate;
  int decertified = 0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const RinnParams bad = perturbed(instance_->theta, 0.3, 100 + s);
    if (certify(plant_, bad, kMargin).status == CertifyStatus::Certified) continue;
    ++decertified;
    const EnforceResult e = enforce_margin(bad, c.X, c.multipliers.lambda_p, c.multipliers.lambda_k, kMargin, plant_);
    EXPECT_EQ(certify(plant_, e.theta, kMargin).status, CertifyStatus::Certified) << s;
    EXPECT_GT(e.theta_distance, 0.0);
  }
  EXPECT_GT(decertified, 0);
}

TEST_F(SynthesisTest, AttainedMarginPositiveAtFeasiblePoint) {
  const auto& c = instance_->certificate;
  const double m = attained_theta_margin(instance_->theta, instance_->theta, c.X, c.multipliers.lambda_p,
                                         c.multipliers.lambda_k, kMargin, plant_);
  EXPECT_GT(m, 0.0);
  const RinnParams bad = perturbed(instance_->theta, 0.3, 5);
  if (certify(plant_, bad, kMargin).status != CertifyStatus::Certified) {
    EXPECT_LT(attained_theta_margin(bad, bad, c.X, c.multipliers.lambda_p, c.multipliers.lambda_k, kMargin, plant_),
              0.0);
  }
}
