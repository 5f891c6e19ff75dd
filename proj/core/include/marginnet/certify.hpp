#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marginnet/controller.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sdp.hpp"

namespace marginnet {

/// Closed loop of the LFT plant and the controller, x = (x_p, x_k),
/// w = (w_p, w_k), v = (v_p, v_k):
///
///   x' = A x + B_w w,   v = C_v x + D_vw w,   w = Delta(v).
struct ClosedLoopMatrices {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B_w;
  Eigen::MatrixXd C_v;
  Eigen::MatrixXd D_vw;

  int n_x() const { return static_cast<int>(A.rows()); }
  int n_w() const { return static_cast<int>(B_w.cols()); }
};

ClosedLoopMatrices closed_loop(const LftPlant& lft, const RinnParams& theta);

/// Checks that the controller's input/output sizes match the plant.
void check_compatible(const PlantModel& plant, const RinnParams& theta);

struct MultiplierSet {
  Eigen::VectorXd lambda_p;  // n_u diagonal entries, >= 0
  Eigen::VectorXd lambda_k;  // n_phi diagonal entries, >= 0
  double alpha = 0.0;

  void validate() const;
};

/// Combined multiplier on (v_p, v_k, w_p, w_k):
///
///   [[a^2 Lp, 0,  0,   0  ],
///    [0,      0,  0,   Lk ],
///    [0,      0, -Lp,  0  ],
///    [0,      Lk, 0,  -2Lk]]
Eigen::MatrixXd combined_multiplier(const MultiplierSet& ms);

/// The certification LMI evaluated at fixed (X, multipliers). Feasible
/// certificates make it negative semidefinite.
Eigen::MatrixXd certification_lmi(const ClosedLoopMatrices& cl, const Eigen::MatrixXd& X,
                                  const MultiplierSet& ms);

struct Certificate {
  Eigen::MatrixXd X;
  MultiplierSet multipliers;
  DiskMargin margin;
  double residual = 0.0;  // max eigenvalue of the evaluated LMI
};

enum class CertifyStatus { Certified, NotCertified, NumericalFailure };

const char* to_string(CertifyStatus status);

struct CertifyResult {
  CertifyStatus status = CertifyStatus::NumericalFailure;
  std::optional<Certificate> certificate;
  std::string detail;

  explicit operator bool() const { return status == CertifyStatus::Certified; }
};

struct CertifyOptions {
  sdp::SolverOptions solver;
};

/// Searches for (X, Lambda_p, Lambda_k) certifying the disk margin for the
/// fixed controller theta.
CertifyResult certify(const PlantModel& plant, const RinnParams& theta, const DiskMargin& margin,
                      const CertifyOptions& options = {});

/// Independent check of a stored certificate: X - eps_pd I >= 0 (up to tol),
/// multipliers nonnegative, LMI max eigenvalue <= tol. Returns the LMI's max
/// eigenvalue through `lmi_max_eig` when given.
bool verify_certificate(const PlantModel& plant, const RinnParams& theta, const Certificate& cert,
                        double tol = 1e-9, double* lmi_max_eig = nullptr);

struct AlphaProbe {
  double alpha;
  CertifyStatus status;
};

struct MaxAlphaResult {
  double alpha_star = 0.0;
  std::optional<Certificate> certificate;  // certificate at alpha_star
  std::vector<AlphaProbe> trace;
  bool capped = false;  // certified at the 64 upper limit
};

/// Largest certified alpha by bracketing (doubling from 0.1 up to 64) and
/// bisection. On return certify succeeds at alpha_star and fails at
/// alpha_star + tol unless `capped`. Throws NoNominalStabilityError when
/// alpha = 0 cannot be certified.
MaxAlphaResult max_alpha(const PlantModel& plant, const RinnParams& theta, double sigma, double tol = 1e-3,
                         const CertifyOptions& options = {});

}  // namespace marginnet
