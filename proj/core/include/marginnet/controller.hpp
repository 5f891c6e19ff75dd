#pragma once

#include <cstddef>
#include <span>
#include <string>

#include <Eigen/Dense>

namespace marginnet {

/// Elementwise activation; both options are sector- and slope-bounded in
/// [0, 1] with phi(0) = 0.
enum class Activation { Tanh, Relu };

double activate(Activation kind, double v);
/// d phi / dv (right derivative for relu at 0 is taken as 0).
double activate_slope(Activation kind, double v);

std::string to_string(Activation kind);
Activation activation_from_string(const std::string& name);

struct ControllerDims {
  int nk = 0;
  int nphi = 0;
  int nu = 1;
  int ny = 1;

  bool operator==(const ControllerDims&) const = default;
};

/// Recurrent implicit neural network controller
///
///   x_k'    = A_k  x_k + B_kw  w_k + B_ky  y
///   v_k     = C_kv x_k + D_kvw w_k + D_kvy y
///   u_tilde = C_ku x_k + D_kuw w_k + D_kuy y
///   w_k     = phi(v_k)
///
/// There are no bias terms, so the origin is always an equilibrium.
struct RinnParams {
  ControllerDims dims;
  Activation activation = Activation::Tanh;

  Eigen::MatrixXd A_k;    // nk x nk
  Eigen::MatrixXd B_kw;   // nk x nphi
  Eigen::MatrixXd B_ky;   // nk x ny
  Eigen::MatrixXd C_kv;   // nphi x nk
  Eigen::MatrixXd D_kvw;  // nphi x nphi
  Eigen::MatrixXd D_kvy;  // nphi x ny
  Eigen::MatrixXd C_ku;   // nu x nk
  Eigen::MatrixXd D_kuw;  // nu x nphi
  Eigen::MatrixXd D_kuy;  // nu x ny

  static RinnParams zeros(ControllerDims dims, Activation activation = Activation::Tanh);

  /// Throws DimensionError on any shape inconsistency.
  void validate() const;
};

struct ControllerOutput {
  Eigen::VectorXd x_k_dot;
  Eigen::VectorXd u_tilde;
  Eigen::VectorXd w_k;
};

struct ImplicitSolveOptions {
  double damping = 0.5;
  int max_iterations = 200;
  double tolerance = 1e-10;
};

/// True when D_kvw is strictly lower-triangular, i.e. the activation
/// equation can be solved by forward substitution.
bool is_strictly_lower_triangular(const Eigen::MatrixXd& m);

/// Solves w = phi(D_kvw w + offset). Uses forward substitution for strictly
/// lower-triangular D_kvw; otherwise damped Picard iteration with a Newton
/// fallback. Throws WellPosednessError when no solution to the requested
/// tolerance is found. `warm_start` may be empty.
Eigen::VectorXd solve_activations(const RinnParams& theta, const Eigen::VectorXd& offset,
                                  const Eigen::VectorXd& warm_start = {},
                                  const ImplicitSolveOptions& options = {});

ControllerOutput forward(const RinnParams& theta, const Eigen::VectorXd& x_k, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& warm_start = {},
                         const ImplicitSolveOptions& options = {});

/// Sufficient well-posedness test: Lambda_k > 0 and
/// He(Lambda_k D_kvw) - 2 Lambda_k < 0.
bool well_posed(const RinnParams& theta, const Eigen::VectorXd& lambda_k);

/// Bias-free feedforward network u = W_L phi(... phi(W_0 y)) as a static
/// implicit network (nk = 0). `weights` holds W_0 .. W_L, L >= 1.
RinnParams embed_feedforward(std::span<const Eigen::MatrixXd> weights,
                             Activation activation = Activation::Tanh);

std::size_t parameter_count(const ControllerDims& dims);

/// Row-major concatenation of A_k, B_kw, B_ky, C_kv, D_kvw, D_kvy, C_ku,
/// D_kuw, D_kuy.
Eigen::VectorXd flatten(const RinnParams& theta);
RinnParams unflatten(const Eigen::VectorXd& params, const ControllerDims& dims,
                     Activation activation = Activation::Tanh);

}  // namespace marginnet
