#pragma once

#include <optional>

#include <Eigen/Dense>

#include "marginnet/certify.hpp"
#include "marginnet/controller.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sdp.hpp"

namespace marginnet {

/// Convexified controller variables. With n_k = n_p the controller, the
/// Lyapunov matrix and the activation multiplier map to these through a
/// change of variables that makes the robust stability condition affine.
struct ThetaHat {
  Eigen::MatrixXd S;         // n_p x n_p, symmetric
  Eigen::MatrixXd R;         // n_p x n_p, symmetric
  Eigen::MatrixXd N_A;       // (n_p + n_u) x (n_p + n_y)
  Eigen::MatrixXd N_B;       // n_p x n_phi
  Eigen::MatrixXd N_C;       // n_phi x n_p
  Eigen::MatrixXd D_kuw;     // n_u x n_phi
  Eigen::MatrixXd Dhat_kvy;  // n_phi x n_y
  Eigen::MatrixXd Dhat_kvw;  // n_phi x n_phi
  Eigen::VectorXd lambda_k;  // n_phi, > 0
  Activation activation = Activation::Tanh;

  int n_p() const { return static_cast<int>(S.rows()); }
  int n_u() const { return static_cast<int>(D_kuw.rows()); }
  int n_y() const { return static_cast<int>(Dhat_kvy.cols()); }
  int n_phi() const { return static_cast<int>(lambda_k.size()); }

  Eigen::MatrixXd N_A11() const { return N_A.topLeftCorner(n_p(), n_p()); }
  Eigen::MatrixXd N_A12() const { return N_A.topRightCorner(n_p(), n_y()); }
  Eigen::MatrixXd N_A21() const { return N_A.bottomLeftCorner(n_u(), n_p()); }
  Eigen::MatrixXd N_A22() const { return N_A.bottomRightCorner(n_u(), n_y()); }

  void validate() const;

  /// Every field row-major in declaration order; its Euclidean norm is the
  /// Frobenius norm used by the projection.
  Eigen::VectorXd flatten() const;
};

/// V U^T = I - R S.
struct ReconFactors {
  Eigen::MatrixXd U;
  Eigen::MatrixXd V;
};

struct ConstructOptions {
  // When I - RS is numerically singular, inflate R by (1 + 1e-3) before
  // factoring instead of throwing DegenerateCertificateError.
  bool regularize_degenerate = false;
  double degenerate_tol = 1e-10;
};

struct ThetaHatConstruction {
  ThetaHat theta_hat;
  ReconFactors factors;
  bool regularized = false;
};

/// theta -> theta_hat using the partitions X = [[S, U], [U^T, *]] and
/// X^-1 = [[R, V], [V^T, *]]. Requires n_k = n_p.
ThetaHatConstruction construct_theta_hat(const RinnParams& theta, const Eigen::MatrixXd& X,
                                         const Eigen::VectorXd& lambda_k, const PlantModel& plant,
                                         const ConstructOptions& options = {});

/// U, V with V U^T = I - R S from the SVD I - RS = P Sigma Q^T:
/// V = P Sigma^(1/2), U = Q Sigma^(1/2).
ReconFactors factor_coupling(const Eigen::MatrixXd& R, const Eigen::MatrixXd& S);

/// Expanded LMI on theta_hat for fixed Lambda_p, blocks ordered
/// (n_p, n_p, n_u, n_phi, n_u). Feasible points make it negative definite.
Eigen::MatrixXd expanded_lmi(const ThetaHat& theta_hat, const Eigen::VectorXd& lambda_p,
                             const DiskMargin& margin, const PlantModel& plant);

struct ProjectionOptions {
  sdp::SolverOptions solver;
  // [[R, I], [I, S]] >= c I with c = half the reference's smallest
  // eigenvalue clamped to [coupling_margin_floor, coupling_margin]. Keeps
  // I - RS well conditioned so the reconstruction does not amplify round-off.
  double coupling_margin = 1e-2;
  double coupling_margin_floor = 1e-4;
  // Expanded LMI <= -lmi_margin I after scaling by 1/max(1, ||A_p||_F).
  double lmi_margin = 1e-6;
  // Upper bound on the theta-space margin; the applied margin is
  // min(theta_margin, half the margin the reconstructed controller attains).
  double theta_margin = 1e-5;
};

/// Closest theta_hat (unweighted Frobenius distance over all fields) to
/// `reference` that satisfies the synthesis conditions at the given
/// Lambda_p. Throws MarginInfeasibleError when no such point exists and
/// NumericalFailureError when the solver gives up.
ThetaHat project_theta_hat(const ThetaHat& reference, const Eigen::VectorXd& lambda_p, const DiskMargin& margin,
                           const PlantModel& plant, const ProjectionOptions& options = {});

struct Reconstruction {
  RinnParams theta;
  Eigen::MatrixXd X;
  Eigen::VectorXd lambda_k;
  ReconFactors factors;
};

/// theta_hat -> (theta, X, Lambda_k). When `hint` carries a well-conditioned
/// U of the right size it is kept and V = (I - RS) U^-T, which keeps the
/// controller in the hint's state coordinates; otherwise U, V come from
/// factor_coupling.
Reconstruction reconstruct(const ThetaHat& theta_hat, const PlantModel& plant,
                           const std::optional<ReconFactors>& hint = std::nullopt);

/// The certification LMI for fixed (X, Lambda_p, Lambda_k) in the appended
/// form [[L(theta), B(theta)^T], [B(theta), -I]] with
/// B = alpha Ltilde_p (first n_u rows of [C_v D_vw]); affine in theta.
Eigen::MatrixXd schur_projection_lmi(const RinnParams& theta, const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                                     const DiskMargin& margin, const PlantModel& plant);

/// Closest theta (unweighted Frobenius distance over flatten(theta)) to
/// `reference` whose certification LMI holds at the fixed (X, Lambda_p,
/// Lambda_k). Throws InternalConsistencyError when the set is empty.
RinnParams project_theta(const RinnParams& reference, const Eigen::MatrixXd& X, const Eigen::VectorXd& lambda_p,
                         const Eigen::VectorXd& lambda_k, const DiskMargin& margin, const PlantModel& plant,
                         const ProjectionOptions& options = {});

/// Largest shift the theta-space projection can demand while keeping `theta`
/// feasible: -scale(reference) lambda_max of schur_projection_lmi at the
/// trace-normalized (X, Lambda_p, Lambda_k). Positive iff theta satisfies the
/// constraint strictly.
double attained_theta_margin(const RinnParams& theta, const RinnParams& reference, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                             const DiskMargin& margin, const PlantModel& plant);

struct EnforceResult {
  RinnParams theta;
  Eigen::MatrixXd X;
  Eigen::VectorXd lambda_k;
  double theta_hat_distance = 0.0;  // ||theta_hat - theta_hat'||
  double theta_distance = 0.0;      // ||theta - theta'||
  bool regularized = false;         // degenerate I - RS was repaired
  bool used_reconstruction = false;  // theta-space projection fell back
};

/// The margin-enforcing branch of the training loop: construct theta_hat'
/// from theta' and the last (X, Lambda_k), project it at the last Lambda_p,
/// reconstruct (X, Lambda_k), then project theta' into the resulting set.
/// When the theta-space projection cannot meet the strictness shift the
/// reconstructed controller (a member of the same set) is returned and
/// flagged.
EnforceResult enforce_margin(const RinnParams& theta_prime, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                             const DiskMargin& margin, const PlantModel& plant,
                             const ProjectionOptions& options = {});

}  // namespace marginnet
