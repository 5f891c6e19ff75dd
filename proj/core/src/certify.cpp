#include "marginnet/certify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "marginnet/errors.hpp"

namespace marginnet {

void check_compatible(const PlantModel& plant, const RinnParams& theta) {
  plant.validate();
  theta.validate();
  if (theta.dims.nu != plant.n_u() || theta.dims.ny != plant.n_y()) {
    throw DimensionError("controller (nu=" + std::to_string(theta.dims.nu) + ", ny=" +
                         std::to_string(theta.dims.ny) + ") does not match plant (nu=" +
                         std::to_string(plant.n_u()) + ", ny=" + std::to_string(plant.n_y()) + ")");
  }
}

ClosedLoopMatrices closed_loop(const LftPlant& lft, const RinnParams& theta) {
  theta.validate();
  const int np = lft.n_p(), nu = lft.n_u(), ny = lft.n_y();
  const int nk = theta.dims.nk, nphi = theta.dims.nphi;
  if (theta.dims.nu != nu || theta.dims.ny != ny) throw DimensionError("closed_loop: controller/plant mismatch");

  const Eigen::MatrixXd& Ap = lft.A;
  const Eigen::MatrixXd& Bp = lft.B_u;
  const Eigen::MatrixXd& Cp = lft.C_y;

  ClosedLoopMatrices cl;
  cl.A.resize(np + nk, np + nk);
  cl.A << Ap + Bp * theta.D_kuy * Cp, Bp * theta.C_ku, theta.B_ky * Cp, theta.A_k;

  cl.B_w.resize(np + nk, nu + nphi);
  cl.B_w << lft.B_w, Bp * theta.D_kuw, Eigen::MatrixXd::Zero(nk, nu), theta.B_kw;

  cl.C_v.resize(nu + nphi, np + nk);
  cl.C_v << theta.D_kuy * Cp, theta.C_ku, theta.D_kvy * Cp, theta.C_kv;

  cl.D_vw.resize(nu + nphi, nu + nphi);
  cl.D_vw << lft.D_vw, theta.D_kuw, Eigen::MatrixXd::Zero(nphi, nu), theta.D_kvw;
  return cl;
}

void MultiplierSet::validate() const {
  if (!(alpha >= 0.0)) throw DomainError("multiplier alpha must be >= 0");
  if ((lambda_p.array() < 0.0).any()) throw DomainError("lambda_p entries must be >= 0");
  if ((lambda_k.array() < 0.0).any()) throw DomainError("lambda_k entries must be >= 0");
}

Eigen::MatrixXd combined_multiplier(const MultiplierSet& ms) {
  ms.validate();
  const Eigen::Index nu = ms.lambda_p.size(), nphi = ms.lambda_k.size();
  const Eigen::Index nw = nu + nphi;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * nw, 2 * nw);
  const Eigen::MatrixXd Lp = ms.lambda_p.asDiagonal();
  const Eigen::MatrixXd Lk = ms.lambda_k.asDiagonal();
  M.block(0, 0, nu, nu) = ms.alpha * ms.alpha * Lp;
  M.block(nu, nw + nu, nphi, nphi) = Lk;
  M.block(nw + nu, nu, nphi, nphi) = Lk;
  M.block(nw, nw, nu, nu) = -Lp;
  M.block(nw + nu, nw + nu, nphi, nphi) = -2.0 * Lk;
  return M;
}

namespace {

// [[C_v, D_vw], [0, I]]
Eigen::MatrixXd outer_factor(const ClosedLoopMatrices& cl) {
  const int nx = cl.n_x(), nw = cl.n_w();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2 * nw, nx + nw);
  G.topLeftCorner(nw, nx) = cl.C_v;
  G.topRightCorner(nw, nw) = cl.D_vw;
  G.bottomRightCorner(nw, nw).setIdentity();
  return G;
}

Eigen::MatrixXd state_selector(int nx, int nw) {
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(nx, nx + nw);
  E.leftCols(nx).setIdentity();
  return E;
}

Eigen::MatrixXd hstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

double lmi_scale(const ClosedLoopMatrices& cl) { return 1.0 / std::max(1.0, cl.A.norm()); }

}  // namespace

Eigen::MatrixXd certification_lmi(const ClosedLoopMatrices& cl, const Eigen::MatrixXd& X,
                                  const MultiplierSet& ms) {
  const int nx = cl.n_x(), nw = cl.n_w();
  if (X.rows() != nx || X.cols() != nx) throw DimensionError("certification_lmi: X has the wrong size");
  if (ms.lambda_p.size() + ms.lambda_k.size() != nw) {
    throw DimensionError("certification_lmi: multiplier sizes do not match the closed loop");
  }
  const Eigen::MatrixXd E = state_selector(nx, nw);
  const Eigen::MatrixXd top = E.transpose() * X * hstack(cl.A, cl.B_w);
  const Eigen::MatrixXd G = outer_factor(cl);
  const Eigen::MatrixXd out = top + top.transpose() + G.transpose() * combined_multiplier(ms) * G;
  return 0.5 * (out + out.transpose());
}

const char* to_string(CertifyStatus status) {
  switch (status) {
    case CertifyStatus::Certified:
      return "certified";
    case CertifyStatus::NotCertified:
      return "not_certified";
    case CertifyStatus::NumericalFailure:
      return "numerical_failure";
  }
  return "unknown";
}

CertifyResult certify(const PlantModel& plant, const RinnParams& theta, const DiskMargin& margin,
                      const CertifyOptions& options) {
  check_compatible(plant, theta);
  margin.validate();
  const LftPlant lft = to_lft(plant, margin);
  const ClosedLoopMatrices cl = closed_loop(lft, theta);
  const int nx = cl.n_x(), nw = cl.n_w();
  const int nu = plant.n_u(), nphi = theta.dims.nphi;

  sdp::SdpProblem problem;
  const sdp::MatrixExpr X = sdp::symmetric_variable(problem, nx);
  const sdp::MatrixExpr Lp = sdp::diagonal_variable(problem, nu, 0.0);
  const sdp::MatrixExpr Lk = sdp::diagonal_variable(problem, nphi, 0.0);

  const Eigen::MatrixXd E = state_selector(nx, nw);
  const Eigen::MatrixXd G = outer_factor(cl);
  const Eigen::MatrixXd G_vp = G.topRows(nu);
  const Eigen::MatrixXd G_vk = G.middleRows(nu, nphi);
  const Eigen::MatrixXd G_wp = G.middleRows(nw, nu);
  const Eigen::MatrixXd G_wk = G.bottomRows(nphi);
  const double a2 = margin.alpha * margin.alpha;

  sdp::MatrixExpr lmi = sdp::he(E.transpose() * X * hstack(cl.A, cl.B_w));
  lmi += a2 * (G_vp.transpose() * Lp * G_vp);
  lmi -= G_wp.transpose() * Lp * G_wp;
  if (nphi > 0) {
    const sdp::MatrixExpr cross = G_vk.transpose() * Lk * G_wk;
    lmi += sdp::he(cross);
    lmi -= 2.0 * (G_wk.transpose() * Lk * G_wk);
  }

  // The LMI is homogeneous in (X, Lambda), so strict feasibility is decided
  // by the best achievable max eigenvalue t over a normalized X:
  //   min t  s.t.  lmi - t I <= 0,  X >= eps_pd I,  tr X = n_x.
  // A certificate exists iff t* <= -eps_lmi; the optimizer then satisfies the
  // shifted constraints lmi <= -eps_lmi I, X >= eps_pd I directly.
  const double scale = lmi_scale(cl);
  const sdp::VariableId t = problem.add_variable();
  sdp::SymMatrixExpr lmi_sym = sdp::SymMatrixExpr::from(lmi).scaled(scale);
  const Eigen::Index dim = lmi_sym.dim();
  lmi_sym.add_term(t, -Eigen::MatrixXd::Identity(dim, dim));
  problem.add_nsd(std::move(lmi_sym), "certification");

  sdp::SymMatrixExpr x_pd = sdp::SymMatrixExpr::from(X);
  x_pd.add_constant(-sdp::kEpsPd * Eigen::MatrixXd::Identity(nx, nx));
  problem.add_psd(std::move(x_pd), "X");

  sdp::LinearExpr trace{-static_cast<double>(nx), {}};
  for (const auto& [id, coeff] : X.terms()) {
    const double d = coeff.diagonal().sum();
    if (d != 0.0) trace.terms.emplace_back(id, d);
  }
  problem.add_equality(std::move(trace));
  problem.add_linear_objective(t, 1.0);

  const sdp::SdpSolution sol = sdp::solve(problem, options.solver);
  const double t_star = sol.assignment.count(t) ? sol.assignment.at(t) : 0.0;

  CertifyResult result;
  std::ostringstream detail;
  detail << "solver " << sol.backend_status << ", t* " << t_star << ", residual " << sol.residual
         << ", iterations " << sol.iterations;
  result.detail = detail.str();
  if (sol.status != sdp::SolveStatus::Optimal) {
    result.status = CertifyStatus::NumericalFailure;
    return result;
  }
  if (t_star + sol.residual > -sdp::kEpsLmi) {
    result.status = CertifyStatus::NotCertified;
    return result;
  }

  Certificate cert;
  cert.X = X.evaluate(sol.assignment);
  cert.X = 0.5 * (cert.X + cert.X.transpose());
  cert.multipliers.alpha = margin.alpha;
  cert.multipliers.lambda_p = Lp.evaluate(sol.assignment).diagonal().cwiseMax(0.0);
  cert.multipliers.lambda_k = Lk.evaluate(sol.assignment).diagonal().cwiseMax(0.0);
  cert.margin = margin;
  cert.residual = sdp::max_eigenvalue(certification_lmi(cl, cert.X, cert.multipliers));

  if (cert.residual > 0.0 || sdp::min_eigenvalue(cert.X) <= 0.0) {
    // The solver claimed success but the rounded certificate does not hold.
    result.status = CertifyStatus::NumericalFailure;
    result.detail += ", certificate re-check failed (lmi max eig " + std::to_string(cert.residual) + ")";
    return result;
  }
  result.status = CertifyStatus::Certified;
  result.certificate = std::move(cert);
  return result;
}

bool verify_certificate(const PlantModel& plant, const RinnParams& theta, const Certificate& cert, double tol,
                        double* lmi_max_eig) {
  check_compatible(plant, theta);
  const LftPlant lft = to_lft(plant, cert.margin);
  const ClosedLoopMatrices cl = closed_loop(lft, theta);
  if (cert.X.rows() != cl.n_x() || cert.multipliers.lambda_p.size() != plant.n_u() ||
      cert.multipliers.lambda_k.size() != theta.dims.nphi) {
    throw DimensionError("verify_certificate: certificate does not match the closed loop");
  }
  if ((cert.multipliers.lambda_p.array() < 0.0).any() || (cert.multipliers.lambda_k.array() < 0.0).any()) {
    return false;
  }
  MultiplierSet ms = cert.multipliers;
  ms.alpha = cert.margin.alpha;
  const double lmi_max = sdp::max_eigenvalue(certification_lmi(cl, cert.X, ms));
  if (lmi_max_eig) *lmi_max_eig = lmi_max;
  const double x_min = sdp::min_eigenvalue(0.5 * (cert.X + cert.X.transpose()));
  return x_min > 0.0 && lmi_max <= tol;
}

MaxAlphaResult max_alpha(const PlantModel& plant, const RinnParams& theta, double sigma, double tol,
                         const CertifyOptions& options) {
  if (!(tol > 0.0)) throw DomainError("max_alpha: tol must be positive");
  constexpr double kAlphaCap = 64.0;
  MaxAlphaResult out;
  auto probe = [&](double alpha) {
    CertifyResult r = certify(plant, theta, DiskMargin{alpha, sigma}, options);
    out.trace.push_back({alpha, r.status});
    return r;
  };

  CertifyResult base = probe(0.0);
  if (!base) {
    throw NoNominalStabilityError("max_alpha: controller cannot be certified at alpha = 0 (" + base.detail + ")");
  }
  double lo = 0.0;
  std::optional<Certificate> lo_cert = base.certificate;

  double hi = 0.1;
  for (;;) {
    CertifyResult r = probe(hi);
    if (!r) break;
    lo = hi;
    lo_cert = r.certificate;
    if (hi >= kAlphaCap) {
      out.alpha_star = lo;
      out.certificate = lo_cert;
      out.capped = true;
      return out;
    }
    hi = std::min(2.0 * hi, kAlphaCap);
  }

  for (;;) {
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      CertifyResult r = probe(mid);
      if (r) {
        lo = mid;
        lo_cert = r.certificate;
      } else {
        hi = mid;
      }
    }
    // The bracket only shows failure at hi <= lo + tol; confirm the contract
    // point itself and re-bracket above it if the solver disagrees.
    CertifyResult edge = probe(lo + tol);
    if (!edge) break;
    lo += tol;
    lo_cert = edge.certificate;
    double step = tol;
    for (;;) {
      if (lo >= kAlphaCap) {
        out.alpha_star = lo;
        out.certificate = lo_cert;
        out.capped = true;
        return out;
      }
      step *= 2.0;
      hi = std::min(lo + step, kAlphaCap);
      CertifyResult r = probe(hi);
      if (!r) break;
      lo = hi;
      lo_cert = r.certificate;
    }
  }
  out.alpha_star = lo;
  out.certificate = lo_cert;
  return out;
}

}  // namespace marginnet
