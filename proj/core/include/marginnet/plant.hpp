#pragma once

#include <cmath>
#include <optional>

#include <Eigen/Dense>

namespace marginnet {

/// Strictly proper LTI plant x' = A x + B u, y = C x. There is no
/// feedthrough term.
struct PlantModel {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;

  /// Validates shapes; throws DimensionError.
  static PlantModel make(Eigen::MatrixXd A, Eigen::MatrixXd B, Eigen::MatrixXd C);

  int n_p() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B.cols()); }
  int n_y() const { return static_cast<int>(C.rows()); }
  void validate() const;
};

/// Disk D(alpha, sigma) of multiplicative input uncertainty.
struct DiskMargin {
  double alpha = 0.0;
  double sigma = 0.0;

  void validate() const;
};

/// Gain interval implied by a disk margin. gamma_max is empty when the disk
/// contains arbitrarily large gains.
struct GainBounds {
  double gamma_min = 1.0;
  std::optional<double> gamma_max = 1.0;
};

struct MarginBounds {
  double gamma_min = 1.0;
  std::optional<double> gamma_max = 1.0;
  double phase_deg = 0.0;
};

GainBounds gain_bounds(const DiskMargin& margin);

/// Largest phase theta (degrees, in [0, 180]) such that every e^{j phi},
/// 0 <= phi <= theta, lies in the uncertainty disk. Closed form
/// 2 atan(alpha / 2) when sigma = 0.
double phase_margin_bound(const DiskMargin& margin);

MarginBounds margin_bounds(const DiskMargin& margin);

inline double to_db(double gain) { return 20.0 * std::log10(gain); }

/// The uncertain plant rewritten as an LTI system in feedback with Delta_p:
///
///   [x_p'; v_p; y] = [A_p  B_p           B_p;
///                     0    (1+s)/2 I     I;
///                     C_p  0             0  ] [x_p; w_p; u_tilde]
struct LftPlant {
  Eigen::MatrixXd A;     // n_p x n_p
  Eigen::MatrixXd B_w;   // n_p x n_u   (w_p input)
  Eigen::MatrixXd B_u;   // n_p x n_u   (u_tilde input)
  Eigen::MatrixXd C_v;   // n_u x n_p
  Eigen::MatrixXd D_vw;  // n_u x n_u
  Eigen::MatrixXd D_vu;  // n_u x n_u
  Eigen::MatrixXd C_y;   // n_y x n_p
  Eigen::MatrixXd D_yw;  // n_y x n_u
  Eigen::MatrixXd D_yu;  // n_y x n_u
  DiskMargin margin;

  int n_p() const { return static_cast<int>(A.rows()); }
  int n_u() const { return static_cast<int>(B_u.cols()); }
  int n_y() const { return static_cast<int>(C_y.rows()); }

  /// [[A, B_w, B_u]; [C_v, D_vw, D_vu]; [C_y, D_yw, D_yu]]
  Eigen::MatrixXd block_matrix() const;
};

LftPlant to_lft(const PlantModel& plant, const DiskMargin& margin);

/// Physical parameters of the flexible rod on a cart. SI units throughout.
struct RodParameters {
  double base_mass = 1.0;         // m_b [kg]
  double tip_mass = 0.1;          // m_t [kg]
  double translating_tip_mass = 0.1;  // m_r [kg], defaults to m_t
  double length = 1.0;            // L [m]
  double density = 0.1;           // rho [kg/m]
  double radius = 1e-2;           // r [m]
  double youngs_modulus = 200e9;  // E [Pa]
  double damping = 0.9;           // B_22 [N s/m]

  double second_moment() const;   // I = pi/4 r^4
  void validate() const;
};

/// Mass matrix of the flexible rod, coordinates (x_b, h).
Eigen::Matrix2d rod_mass_matrix(const RodParameters& p);
Eigen::Matrix2d rod_stiffness_matrix(const RodParameters& p);

/// States (x_b, h, x_b', h'), input force, output tip position x_b + h.
PlantModel flexible_rod_plant(const RodParameters& p = {});

/// States (x_b, x_b'), input force, output base position.
PlantModel rigid_rod_plant(const RodParameters& p = {});

}  // namespace marginnet
