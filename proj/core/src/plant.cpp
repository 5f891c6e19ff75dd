#include "marginnet/plant.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>

#include "marginnet/errors.hpp"

namespace marginnet {

PlantModel PlantModel::make(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C) {
  PlantModel p{std::move(A), std::move(B), std::move(C)};
  p.validate();
  return p;
}

void PlantModel::validate() const {
  if (A.rows() != A.cols()) throw DimensionError("plant: A must be square");
  if (A.rows() == 0) throw DimensionError("plant: empty state");
  if (B.rows() != A.rows()) throw DimensionError("plant: B must have n_p rows");
  if (C.cols() != A.rows()) throw DimensionError("plant: C must have n_p columns");
  if (B.cols() == 0 || C.rows() == 0) throw DimensionError("plant: need at least one input and output");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite()) throw DomainError("plant: non-finite entries");
}

void DiskMargin::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("disk margin: alpha must be finite and >= 0");
  if (!std::isfinite(sigma)) throw DomainError("disk margin: sigma must be finite");
}

GainBounds gain_bounds(const DiskMargin& margin) {
  margin.validate();
  const double a = margin.alpha;
  const double s = margin.sigma;
  GainBounds out;
  out.gamma_min = (2.0 - a * (1.0 - s)) / (2.0 + a * (1.0 + s));
  const double den = 2.0 - a * (1.0 + s);
  if (den <= 0.0) {
    out.gamma_max.reset();
  } else {
    out.gamma_max = (2.0 + a * (1.0 - s)) / den;
  }
  return out;
}

namespace {

// |delta| that maps to the unit-modulus gain e^{j theta}.
double delta_magnitude(double theta_rad, double sigma) {
  const std::complex<double> g = std::polar(1.0, theta_rad);
  const std::complex<double> den = 0.5 * (1.0 - sigma) + 0.5 * (1.0 + sigma) * g;
  if (std::abs(den) < 1e-300) return std::numeric_limits<double>::infinity();
  return std::abs((g - 1.0) / den);
}

}  // namespace

double phase_margin_bound(const DiskMargin& margin) {
  margin.validate();
  const double alpha = margin.alpha;
  if (alpha == 0.0) return 0.0;
  constexpr double kDeg = std::numbers::pi / 180.0;

  // Locate the first crossing of |delta(theta)| = alpha on a fine grid, then
  // bisect inside that cell.
  constexpr int kGrid = 3600;
  double lo = 0.0;
  double hi = -1.0;
  for (int i = 1; i <= kGrid; ++i) {
    const double theta = 180.0 * i / kGrid;
    if (delta_magnitude(theta * kDeg, margin.sigma) >= alpha) {
      hi = theta;
      break;
    }
    lo = theta;
  }
  if (hi < 0.0) return 180.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (delta_magnitude(mid * kDeg, margin.sigma) >= alpha) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

MarginBounds margin_bounds(const DiskMargin& margin) {
  const GainBounds g = gain_bounds(margin);
  return {g.gamma_min, g.gamma_max, phase_margin_bound(margin)};
}

Eigen::MatrixXd LftPlant::block_matrix() const {
  const int np = n_p(), nu = n_u(), ny = n_y();
  Eigen::MatrixXd m(np + nu + ny, np + 2 * nu);
  m << A, B_w, B_u, C_v, D_vw, D_vu, C_y, D_yw, D_yu;
  return m;
}

LftPlant to_lft(const PlantModel& plant, const DiskMargin& margin) {
  plant.validate();
  margin.validate();
  const int np = plant.n_p(), nu = plant.n_u(), ny = plant.n_y();
  LftPlant lft;
  lft.A = plant.A;
  lft.B_w = plant.B;
  lft.B_u = plant.B;
  lft.C_v = Eigen::MatrixXd::Zero(nu, np);
  lft.D_vw = 0.5 * (1.0 + margin.sigma) * Eigen::MatrixXd::Identity(nu, nu);
  lft.D_vu = Eigen::MatrixXd::Identity(nu, nu);
  lft.C_y = plant.C;
  lft.D_yw = Eigen::MatrixXd::Zero(ny, nu);
  lft.D_yu = Eigen::MatrixXd::Zero(ny, nu);
  lft.margin = margin;
  return lft;
}

double RodParameters::second_moment() const {
  return std::numbers::pi / 4.0 * std::pow(radius, 4);
}

void RodParameters::validate() const {
  const double vals[] = {base_mass, tip_mass, translating_tip_mass, length, density, radius, youngs_modulus};
  for (double v : vals) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("rod parameters must be positive and finite");
  }
  if (!(damping >= 0.0)) throw DomainError("rod damping must be nonnegative");
}

Eigen::Matrix2d rod_mass_matrix(const RodParameters& p) {
  const double rl = p.density * p.length;
  Eigen::Matrix2d M;
  M << p.base_mass + p.translating_tip_mass + rl, p.tip_mass + rl / 3.0,
      p.tip_mass + rl / 3.0, p.tip_mass + rl / 5.0;
  return M;
}

Eigen::Matrix2d rod_stiffness_matrix(const RodParameters& p) {
  Eigen::Matrix2d K = Eigen::Matrix2d::Zero();
  K(1, 1) = 4.0 * p.youngs_modulus * p.second_moment() / std::pow(p.length, 3);
  return K;
}

PlantModel flexible_rod_plant(const RodParameters& p) {
  p.validate();
  const Eigen::Matrix2d M = rod_mass_matrix(p);
  const Eigen::Matrix2d K = rod_stiffness_matrix(p);
  Eigen::Matrix2d Bd = Eigen::Matrix2d::Zero();
  Bd(1, 1) = p.damping;

  Eigen::FullPivLU<Eigen::Matrix2d> lu(M);
  if (!lu.isInvertible() || std::abs(M.determinant()) < 1e-12 * M.norm() * M.norm()) {
    throw DomainError("flexible rod: mass matrix is singular");
  }
  const Eigen::Matrix2d Minv = lu.inverse();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 4);
  A.topRightCorner(2, 2).setIdentity();
  A.bottomLeftCorner(2, 2) = -Minv * K;
  A.bottomRightCorner(2, 2) = -Minv * Bd;

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(4, 1);
  B.bottomRows(2) = Minv * Eigen::Vector2d(1.0, 0.0);

  Eigen::MatrixXd C(1, 4);
  C << 1.0, 1.0, 0.0, 0.0;
  return PlantModel::make(std::move(A), std::move(B), std::move(C));
}

PlantModel rigid_rod_plant(const RodParameters& p) {
  p.validate();
  const double total = p.base_mass + p.translating_tip_mass + p.density * p.length;
  Eigen::MatrixXd A(2, 2);
  A << 0.0, 1.0, 0.0, 0.0;
  Eigen::MatrixXd B(2, 1);
  B << 0.0, 1.0 / total;
  Eigen::MatrixXd C(1, 2);
  C << 1.0, 0.0;
  return PlantModel::make(std::move(A), std::move(B), std::move(C));
}

}  // namespace marginnet
