#include "marginnet/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include "marginnet/errors.hpp"

namespace marginnet {

using sdp::MatrixExpr;

void ThetaHat::validate() const {
  const int np = n_p(), nu = n_u(), ny = n_y(), nphi = n_phi();
  const auto check = [](const Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c, const char* name) {
    if (m.rows() != r || m.cols() != c) throw DimensionError(std::string("theta_hat: ") + name + " has the wrong shape");
  };
  check(S, np, np, "S");
  check(R, np, np, "R");
  check(N_A, np + nu, np + ny, "N_A");
  check(N_B, np, nphi, "N_B");
  check(N_C, nphi, np, "N_C");
  check(D_kuw, nu, nphi, "D_kuw");
  check(Dhat_kvy, nphi, ny, "Dhat_kvy");
  check(Dhat_kvw, nphi, nphi, "Dhat_kvw");
}

Eigen::VectorXd ThetaHat::flatten() const {
  validate();
  const Eigen::MatrixXd* fields[] = {&S, &R, &N_A, &N_B, &N_C, &D_kuw, &Dhat_kvy, &Dhat_kvw};
  Eigen::Index total = lambda_k.size();
  for (const auto* f : fields) total += f->size();
  Eigen::VectorXd out(total);
  Eigen::Index pos = 0;
  for (const auto* f : fields) {
    for (Eigen::Index i = 0; i < f->rows(); ++i) {
      for (Eigen::Index j = 0; j < f->cols(); ++j) out(pos++) = (*f)(i, j);
    }
  }
  out.tail(lambda_k.size()) = lambda_k;
  return out;
}

namespace {

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

bool coupling_degenerate(const Eigen::MatrixXd& M, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return false;
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  return smax == 0.0 || smin <= tol * smax;
}

}  // namespace

ReconFactors factor_coupling(const Eigen::MatrixXd& R, const Eigen::MatrixXd& S) {
  const Eigen::Index n = R.rows();
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - R * S;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd root = svd.singularValues().cwiseSqrt();
  ReconFactors f;
  f.V = svd.matrixU() * root.asDiagonal();
  f.U = svd.matrixV() * root.asDiagonal();
  return f;
}

ThetaHatConstruction construct_theta_hat(const RinnParams& theta, const Eigen::MatrixXd& X,
                                         const Eigen::VectorXd& lambda_k, const PlantModel& plant,
                                         const ConstructOptions& options) {
  check_compatible(plant, theta);
  const int np = plant.n_p(), nu = plant.n_u(), ny = plant.n_y(), nphi = theta.dims.nphi;
  if (theta.dims.nk != np) throw DimensionError("construct_theta_hat: controller order must equal plant order");
  if (X.rows() != 2 * np || X.cols() != 2 * np) throw DimensionError("construct_theta_hat: X has the wrong size");
  if (lambda_k.size() != nphi) throw DimensionError("construct_theta_hat: lambda_k has the wrong size");
  if ((lambda_k.array() <= 0.0).any()) throw DomainError("construct_theta_hat: lambda_k must be positive");

  const Eigen::MatrixXd Xs = sym(X);
  Eigen::LLT<Eigen::MatrixXd> llt(Xs);
  if (llt.info() != Eigen::Success) throw DomainError("construct_theta_hat: X is not positive definite");
  const Eigen::MatrixXd Y = sym(llt.solve(Eigen::MatrixXd::Identity(2 * np, 2 * np)));

  ThetaHatConstruction out;
  const Eigen::MatrixXd S = Xs.topLeftCorner(np, np);
  Eigen::MatrixXd R = Y.topLeftCorner(np, np);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(np, np);
  ReconFactors f{Xs.topRightCorner(np, np), Y.topRightCorner(np, np)};

  if (coupling_degenerate(I - R * S, options.degenerate_tol)) {
    if (!options.regularize_degenerate) {
      throw DegenerateCertificateError("construct_theta_hat: I - RS is singular (X has no usable off-diagonal block)");
    }
    R *= 1.0 + 1e-3;
    if (coupling_degenerate(I - R * S, options.degenerate_tol)) {
      throw DegenerateCertificateError("construct_theta_hat: I - RS remains singular after regularization");
    }
    f = factor_coupling(R, S);
    out.regularized = true;
  }
  const Eigen::MatrixXd& U = f.U;
  const Eigen::MatrixXd& V = f.V;

  const Eigen::MatrixXd& Ap = plant.A;
  const Eigen::MatrixXd& Bp = plant.B;
  const Eigen::MatrixXd& Cp = plant.C;

  Eigen::MatrixXd left = Eigen::MatrixXd::Zero(np + nu, np + nu);
  left << U, S * Bp, Eigen::MatrixXd::Zero(nu, np), Eigen::MatrixXd::Identity(nu, nu);
  Eigen::MatrixXd mid(np + nu, np + ny);
  mid << theta.A_k, theta.B_ky, theta.C_ku, theta.D_kuy;
  Eigen::MatrixXd right = Eigen::MatrixXd::Zero(np + ny, np + ny);
  right << V.transpose(), Eigen::MatrixXd::Zero(np, ny), Cp * R, Eigen::MatrixXd::Identity(ny, ny);

  ThetaHat& th = out.theta_hat;
  th.activation = theta.activation;
  th.S = S;
  th.R = R;
  th.N_A = left * mid * right;
  th.N_A.topLeftCorner(np, np) += S * Ap * R;
  const Eigen::MatrixXd Lk = lambda_k.asDiagonal();
  th.N_B = S * Bp * theta.D_kuw + U * theta.B_kw;
  th.N_C = Lk * (theta.D_kvy * Cp * R + theta.C_kv * V.transpose());
  th.D_kuw = theta.D_kuw;
  th.Dhat_kvy = Lk * theta.D_kvy;
  th.Dhat_kvw = Lk * theta.D_kvw;
  th.lambda_k = lambda_k;
  out.factors = f;
  return out;
}

namespace {

struct HatVars {
  MatrixExpr S, R, NA11, NA12, NA21, NA22, NB, NC, Dkuw, Dkvy, Dkvw, Lk;
};

HatVars make_hat_vars(sdp::SdpProblem& p, int np, int nu, int ny, int nphi, std::optional<double> lk_lower) {
  HatVars v;
  v.S = sdp::symmetric_variable(p, np);
  v.R = sdp::symmetric_variable(p, np);
  v.NA11 = sdp::full_variable(p, np, np);
  v.NA12 = sdp::full_variable(p, np, ny);
  v.NA21 = sdp::full_variable(p, nu, np);
  v.NA22 = sdp::full_variable(p, nu, ny);
  v.NB = sdp::full_variable(p, np, nphi);
  v.NC = sdp::full_variable(p, nphi, np);
  v.Dkuw = sdp::full_variable(p, nu, nphi);
  v.Dkvy = sdp::full_variable(p, nphi, ny);
  v.Dkvw = sdp::full_variable(p, nphi, nphi);
  v.Lk = sdp::diagonal_variable(p, nphi, lk_lower);
  return v;
}

void assign_hat(const HatVars& v, const ThetaHat& th, sdp::Assignment& a) {
  sdp::assign_values(v.S, th.S, a);
  sdp::assign_values(v.R, th.R, a);
  sdp::assign_values(v.NA11, th.N_A11(), a);
  sdp::assign_values(v.NA12, th.N_A12(), a);
  sdp::assign_values(v.NA21, th.N_A21(), a);
  sdp::assign_values(v.NA22, th.N_A22(), a);
  sdp::assign_values(v.NB, th.N_B, a);
  sdp::assign_values(v.NC, th.N_C, a);
  sdp::assign_values(v.Dkuw, th.D_kuw, a);
  sdp::assign_values(v.Dkvy, th.Dhat_kvy, a);
  sdp::assign_values(v.Dkvw, th.Dhat_kvw, a);
  sdp::assign_values(v.Lk, Eigen::MatrixXd(th.lambda_k.asDiagonal()), a);
}

sdp::SymMatrixExpr expanded_lmi_expr(const HatVars& v, const PlantModel& plant, const Eigen::VectorXd& lambda_p,
                                     const DiskMargin& margin) {
  const int np = plant.n_p(), nu = plant.n_u();
  const auto nphi = v.Lk.rows();
  const Eigen::MatrixXd& Ap = plant.A;
  const Eigen::MatrixXd& Bp = plant.B;
  const Eigen::MatrixXd& Cp = plant.C;
  const Eigen::MatrixXd Lt = sdp::diag_psd_factor(lambda_p);
  const double a = margin.alpha;
  const Eigen::MatrixXd aLt = a * Lt;

  sdp::SymBlockBuilder b({np, np, nu, nphi, nu});
  b.set(0, 0, sdp::he(Ap * v.R + Bp * v.NA21));
  b.set(1, 0, v.NA11 + MatrixExpr(Eigen::MatrixXd(Ap.transpose())) + (Cp.transpose() * v.NA22.transpose()) * Bp.transpose());
  b.set(1, 1, sdp::he(v.S * Ap + v.NA12 * Cp));
  b.set(2, 0, Eigen::MatrixXd(Bp.transpose()));
  b.set(2, 1, Bp.transpose() * v.S);
  b.set(2, 2, Eigen::MatrixXd(-Eigen::MatrixXd(lambda_p.asDiagonal())));
  if (nphi > 0) {
    b.set(3, 0, v.Dkuw.transpose() * Bp.transpose() + v.NC);
    b.set(3, 1, v.NB.transpose() + v.Dkvy * Cp);
    b.set(3, 3, sdp::he(v.Dkvw) - 2.0 * v.Lk);
    b.set(4, 3, aLt * v.Dkuw);
  }
  b.set(4, 0, aLt * v.NA21);
  b.set(4, 1, (aLt * v.NA22) * Cp);
  b.set(4, 2, Eigen::MatrixXd(0.5 * a * (1.0 + margin.sigma) * Lt));
  b.set(4, 4, Eigen::MatrixXd(-Eigen::MatrixXd::Identity(nu, nu)));
  return b.build();
}

void check_hat_plant(const ThetaHat& th, const PlantModel& plant) {
  th.validate();
  plant.validate();
  if (th.n_p() != plant.n_p() || th.n_u() != plant.n_u() || th.n_y() != plant.n_y()) {
    throw DimensionError("theta_hat does not match the plant dimensions");
  }
}

double plant_scale(const PlantModel& plant) { return 1.0 / std::max(1.0, plant.A.norm()); }

}  // namespace

Eigen::MatrixXd expanded_lmi(const ThetaHat& theta_hat, const Eigen::VectorXd& lambda_p, const DiskMargin& margin,
                             const PlantModel& plant) {
  check_hat_plant(theta_hat, plant);
  if (lambda_p.size() != plant.n_u()) throw DimensionError("expanded_lmi: lambda_p has the wrong size");
  sdp::SdpProblem scratch;
  const HatVars v = make_hat_vars(scratch, plant.n_p(), plant.n_u(), plant.n_y(), theta_hat.n_phi(), std::nullopt);
  sdp::Assignment a;
  assign_hat(v, theta_hat, a);
  return sdp::evaluate(expanded_lmi_expr(v, plant, lambda_p, margin), a);
}

ThetaHat project_theta_hat(const ThetaHat& reference, const Eigen::VectorXd& lambda_p, const DiskMargin& margin,
                           const PlantModel& plant, const ProjectionOptions& options) {
  check_hat_plant(reference, plant);
  margin.validate();
  if (lambda_p.size() != plant.n_u()) throw DimensionError("project_theta_hat: lambda_p has the wrong size");
  const int np = plant.n_p(), nu = plant.n_u(), ny = plant.n_y(), nphi = reference.n_phi();

  sdp::SdpProblem problem;
  const HatVars v = make_hat_vars(problem, np, nu, ny, nphi, sdp::kEpsPd);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(np, np);

  sdp::SymMatrixExpr s_pd = sdp::SymMatrixExpr::from(v.S);
  s_pd.add_constant(-sdp::kEpsPd * I);
  problem.add_psd(std::move(s_pd), "S");
  sdp::SymMatrixExpr r_pd = sdp::SymMatrixExpr::from(v.R);
  r_pd.add_constant(-sdp::kEpsPd * I);
  problem.add_psd(std::move(r_pd), "R");

  sdp::SymBlockBuilder coupling({np, np});
  coupling.set(0, 0, v.R);
  coupling.set(1, 0, I);
  coupling.set(1, 1, v.S);
  sdp::SymMatrixExpr c = coupling.build();
  Eigen::MatrixXd ref_coupling(2 * np, 2 * np);
  ref_coupling << reference.R, I, I, reference.S;
  const double c_margin = std::max(
      std::clamp(0.5 * sdp::min_eigenvalue(ref_coupling), options.coupling_margin_floor, options.coupling_margin),
      sdp::strictness_shift(sdp::kEpsPd, c.constant_term()));
  c.add_constant(-c_margin * Eigen::MatrixXd::Identity(2 * np, 2 * np));
  problem.add_psd(std::move(c), "coupling");

  sdp::SymMatrixExpr lmi = expanded_lmi_expr(v, plant, lambda_p, margin).scaled(plant_scale(plant));
  const Eigen::Index dim = lmi.dim();
  lmi.add_constant(std::max(options.lmi_margin, sdp::strictness_shift(sdp::kEpsLmi, lmi.constant_term())) *
                   Eigen::MatrixXd::Identity(dim, dim));
  problem.add_nsd(std::move(lmi), "expanded");

  sdp::add_frobenius_distance(problem, v.S, reference.S);
  sdp::add_frobenius_distance(problem, v.R, reference.R);
  sdp::add_frobenius_distance(problem, v.NA11, reference.N_A11());
  sdp::add_frobenius_distance(problem, v.NA12, reference.N_A12());
  sdp::add_frobenius_distance(problem, v.NA21, reference.N_A21());
  sdp::add_frobenius_distance(problem, v.NA22, reference.N_A22());
  sdp::add_frobenius_distance(problem, v.NB, reference.N_B);
  sdp::add_frobenius_distance(problem, v.NC, reference.N_C);
  sdp::add_frobenius_distance(problem, v.Dkuw, reference.D_kuw);
  sdp::add_frobenius_distance(problem, v.Dkvy, reference.Dhat_kvy);
  sdp::add_frobenius_distance(problem, v.Dkvw, reference.Dhat_kvw);
  sdp::add_frobenius_distance(problem, v.Lk, Eigen::MatrixXd(reference.lambda_k.asDiagonal()));

  const sdp::SdpSolution sol = sdp::solve(problem, options.solver);
  if (sol.status == sdp::SolveStatus::Infeasible) {
    throw MarginInfeasibleError("project_theta_hat: no controller satisfies the margin (alpha=" +
                                std::to_string(margin.alpha) + ", sigma=" + std::to_string(margin.sigma) +
                                ") at the current Lambda_p");
  }
  if (sol.status != sdp::SolveStatus::Optimal) {
    throw NumericalFailureError("project_theta_hat: solver " + sol.backend_status + ", residual " +
                                std::to_string(sol.residual));
  }

  const auto& a = sol.assignment;
  ThetaHat out;
  out.activation = reference.activation;
  out.S = sym(v.S.evaluate(a));
  out.R = sym(v.R.evaluate(a));
  out.N_A.resize(np + nu, np + ny);
  out.N_A << v.NA11.evaluate(a), v.NA12.evaluate(a), v.NA21.evaluate(a), v.NA22.evaluate(a);
  out.N_B = v.NB.evaluate(a);
  out.N_C = v.NC.evaluate(a);
  out.D_kuw = v.Dkuw.evaluate(a);
  out.Dhat_kvy = v.Dkvy.evaluate(a);
  out.Dhat_kvw = v.Dkvw.evaluate(a);
  out.lambda_k = v.Lk.evaluate(a).diagonal();
  return out;
}

Reconstruction reconstruct(const ThetaHat& th, const PlantModel& plant, const std::optional<ReconFactors>& hint) {
  check_hat_plant(th, plant);
  const int np = plant.n_p(), nu = plant.n_u(), ny = plant.n_y(), nphi = th.n_phi();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(np, np);
  const Eigen::MatrixXd M = I - th.R * th.S;
  if (coupling_degenerate(M, 1e-12)) throw ReconstructionError("reconstruct: I - RS is singular");
  if ((th.lambda_k.array() <= 0.0).any()) throw ReconstructionError("reconstruct: lambda_k must be positive");

  ReconFactors f;
  bool use_hint = false;
  if (hint && hint->U.rows() == np && hint->U.cols() == np) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(hint->U);
    const auto& sv = svd.singularValues();
    use_hint = sv(sv.size() - 1) > 1e-8 * sv(0);
  }
  if (use_hint) {
    f.U = hint->U;
    // V U^T = M  =>  U V^T = M^T.
    f.V = hint->U.partialPivLu().solve(M.transpose()).transpose();
  } else {
    f = factor_coupling(th.R, th.S);
  }
  const Eigen::MatrixXd& U = f.U;
  const Eigen::MatrixXd& V = f.V;
  const Eigen::MatrixXd& Ap = plant.A;
  const Eigen::MatrixXd& Bp = plant.B;
  const Eigen::MatrixXd& Cp = plant.C;
  const Eigen::MatrixXd& S = th.S;
  const Eigen::MatrixXd& R = th.R;

  Eigen::MatrixXd left = Eigen::MatrixXd::Zero(np + nu, np + nu);
  left << U, S * Bp, Eigen::MatrixXd::Zero(nu, np), Eigen::MatrixXd::Identity(nu, nu);
  Eigen::MatrixXd right = Eigen::MatrixXd::Zero(np + ny, np + ny);
  right << V.transpose(), Eigen::MatrixXd::Zero(np, ny), Cp * R, Eigen::MatrixXd::Identity(ny, ny);

  Eigen::MatrixXd rhs = th.N_A;
  rhs.topLeftCorner(np, np) -= S * Ap * R;
  Eigen::PartialPivLU<Eigen::MatrixXd> left_lu(left);
  Eigen::PartialPivLU<Eigen::MatrixXd> right_t_lu(right.transpose());
  const Eigen::MatrixXd tmp = left_lu.solve(rhs);                            // left^-1 rhs
  const Eigen::MatrixXd K = right_t_lu.solve(tmp.transpose()).transpose();  // ... right^-1
  if (!K.allFinite()) throw ReconstructionError("reconstruct: singular block solve");

  Reconstruction out;
  RinnParams& t = out.theta;
  t = RinnParams::zeros({np, nphi, nu, ny}, th.activation);
  t.A_k = K.topLeftCorner(np, np);
  t.B_ky = K.topRightCorner(np, ny);
  t.C_ku = K.bottomLeftCorner(nu, np);
  t.D_kuy = K.bottomRightCorner(nu, ny);
  t.D_kuw = th.D_kuw;

  Eigen::PartialPivLU<Eigen::MatrixXd> u_lu(U);
  t.B_kw = u_lu.solve(th.N_B - S * Bp * th.D_kuw);
  const Eigen::VectorXd lk_inv = th.lambda_k.cwiseInverse();
  t.D_kvy = lk_inv.asDiagonal() * th.Dhat_kvy;
  t.D_kvw = lk_inv.asDiagonal() * th.Dhat_kvw;
  const Eigen::MatrixXd Z = lk_inv.asDiagonal() * th.N_C - t.D_kvy * Cp * R;  // C_kv V^T = Z
  t.C_kv = V.partialPivLu().solve(Z.transpose()).transpose();

  Eigen::MatrixXd upper(2 * np, 2 * np);
  upper << I, S, Eigen::MatrixXd::Zero(np, np), U.transpose();
  Eigen::MatrixXd pi(2 * np, 2 * np);
  pi << R, I, V.transpose(), Eigen::MatrixXd::Zero(np, np);
  // X = upper * pi^-1  <=>  X^T = pi^-T upper^T.
  const Eigen::MatrixXd X = pi.transpose().partialPivLu().solve(upper.transpose()).transpose();
  if (!t.B_kw.allFinite() || !t.C_kv.allFinite() || !X.allFinite()) {
    throw ReconstructionError("reconstruct: singular block solve");
  }
  out.X = sym(X);
  out.lambda_k = th.lambda_k;
  out.factors = f;
  return out;
}

namespace {

struct ThetaVars {
  MatrixExpr A_k, B_kw, B_ky, C_kv, D_kvw, D_kvy, C_ku, D_kuw, D_kuy;
};

ThetaVars make_theta_vars(sdp::SdpProblem& p, const ControllerDims& d) {
  ThetaVars v;
  v.A_k = sdp::full_variable(p, d.nk, d.nk);
  v.B_kw = sdp::full_variable(p, d.nk, d.nphi);
  v.B_ky = sdp::full_variable(p, d.nk, d.ny);
  v.C_kv = sdp::full_variable(p, d.nphi, d.nk);
  v.D_kvw = sdp::full_variable(p, d.nphi, d.nphi);
  v.D_kvy = sdp::full_variable(p, d.nphi, d.ny);
  v.C_ku = sdp::full_variable(p, d.nu, d.nk);
  v.D_kuw = sdp::full_variable(p, d.nu, d.nphi);
  v.D_kuy = sdp::full_variable(p, d.nu, d.ny);
  return v;
}

template <typename Fn>
void zip_theta(const ThetaVars& v, const RinnParams& t, Fn&& fn) {
  fn(v.A_k, t.A_k);
  fn(v.B_kw, t.B_kw);
  fn(v.B_ky, t.B_ky);
  fn(v.C_kv, t.C_kv);
  fn(v.D_kvw, t.D_kvw);
  fn(v.D_kvy, t.D_kvy);
  fn(v.C_ku, t.C_ku);
  fn(v.D_kuw, t.D_kuw);
  fn(v.D_kuy, t.D_kuy);
}

// Appended-block certification LMI, affine in the controller variables.
sdp::SymMatrixExpr schur_lmi_expr(const ThetaVars& v, const ControllerDims& d, const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                                  const DiskMargin& margin, const PlantModel& plant) {
  const int np = plant.n_p(), nu = plant.n_u();
  const int nk = d.nk, nphi = d.nphi;
  const int nx = np + nk, nw = nu + nphi, n = nx + nw;
  const Eigen::MatrixXd& Ap = plant.A;
  const Eigen::MatrixXd& Bp = plant.B;
  const Eigen::MatrixXd& Cp = plant.C;

  MatrixExpr A = sdp::embed(MatrixExpr(Ap) + (Bp * v.D_kuy) * Cp, 0, 0, nx, nx);
  A += sdp::embed(Bp * v.C_ku, 0, np, nx, nx);
  A += sdp::embed(v.B_ky * Cp, np, 0, nx, nx);
  A += sdp::embed(v.A_k, np, np, nx, nx);

  // [A, B_w]
  MatrixExpr AB = sdp::embed(A, 0, 0, nx, n);
  AB += sdp::embed(MatrixExpr(Bp), 0, nx, nx, n);
  AB += sdp::embed(Bp * v.D_kuw, 0, nx + nu, nx, n);
  AB += sdp::embed(v.B_kw, np, nx + nu, nx, n);

  // [C_v, D_vw], split by the v_p and v_k rows.
  MatrixExpr Gp = sdp::embed(v.D_kuy * Cp, 0, 0, nu, n);
  Gp += sdp::embed(v.C_ku, 0, np, nu, n);
  Gp += sdp::embed(MatrixExpr(Eigen::MatrixXd(0.5 * (1.0 + margin.sigma) * Eigen::MatrixXd::Identity(nu, nu))), 0, nx,
                   nu, n);
  Gp += sdp::embed(v.D_kuw, 0, nx + nu, nu, n);
  MatrixExpr Gk = sdp::embed(v.D_kvy * Cp, 0, 0, nphi, n);
  Gk += sdp::embed(v.C_kv, 0, np, nphi, n);
  Gk += sdp::embed(v.D_kvw, 0, nx + nu, nphi, n);

  Eigen::MatrixXd Ex = Eigen::MatrixXd::Zero(nx, n);
  Ex.leftCols(nx).setIdentity();
  Eigen::MatrixXd Ewp = Eigen::MatrixXd::Zero(nu, n);
  Ewp.middleCols(nx, nu).setIdentity();
  Eigen::MatrixXd Ewk = Eigen::MatrixXd::Zero(nphi, n);
  Ewk.rightCols(nphi).setIdentity();
  const Eigen::MatrixXd Lp = lambda_p.asDiagonal();
  const Eigen::MatrixXd Lk = lambda_k.asDiagonal();

  MatrixExpr L = sdp::he((Ex.transpose() * X) * AB);
  L -= MatrixExpr(Eigen::MatrixXd(Ewp.transpose() * Lp * Ewp));
  if (nphi > 0) {
    L += sdp::he(Gk.transpose() * (Lk * Ewk));
    L -= MatrixExpr(Eigen::MatrixXd(2.0 * Ewk.transpose() * Lk * Ewk));
  }
  const MatrixExpr B = (margin.alpha * sdp::diag_psd_factor(lambda_p)) * Gp;

  MatrixExpr full = sdp::embed(L, 0, 0, n + nu, n + nu);
  full += sdp::embed(B, n, 0, n + nu, n + nu);
  full += sdp::embed(B.transpose(), 0, n, n + nu, n + nu);
  full += sdp::embed(MatrixExpr(Eigen::MatrixXd(-Eigen::MatrixXd::Identity(nu, nu))), n, n, n + nu, n + nu);
  return sdp::SymMatrixExpr::from(full);
}

void check_fixed_multipliers(const RinnParams& theta, const Eigen::MatrixXd& X, const Eigen::VectorXd& lambda_p,
                             const Eigen::VectorXd& lambda_k, const PlantModel& plant) {
  check_compatible(plant, theta);
  const int nx = plant.n_p() + theta.dims.nk;
  if (X.rows() != nx || X.cols() != nx) throw DimensionError("theta projection: X has the wrong size");
  if (lambda_p.size() != plant.n_u()) throw DimensionError("theta projection: lambda_p has the wrong size");
  if (lambda_k.size() != theta.dims.nphi) throw DimensionError("theta projection: lambda_k has the wrong size");
}

}  // namespace

Eigen::MatrixXd schur_projection_lmi(const RinnParams& theta, const Eigen::MatrixXd& X,
                                     const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                                     const DiskMargin& margin, const PlantModel& plant) {
  check_fixed_multipliers(theta, X, lambda_p, lambda_k, plant);
  sdp::SdpProblem scratch;
  const ThetaVars v = make_theta_vars(scratch, theta.dims);
  sdp::Assignment a;
  zip_theta(v, theta, [&](const MatrixExpr& e, const Eigen::MatrixXd& m) { sdp::assign_values(e, m, a); });
  return sdp::evaluate(schur_lmi_expr(v, theta.dims, X, lambda_p, lambda_k, margin, plant), a);
}

namespace {

// The certification LMI is homogeneous in (X, Lambda_p, Lambda_k); fix the
// scale by tr X = n_x, the normalization certify uses.
struct NormalizedMultipliers {
  Eigen::MatrixXd X;
  Eigen::VectorXd lambda_p;
  Eigen::VectorXd lambda_k;
};

NormalizedMultipliers normalize(const Eigen::MatrixXd& X, const Eigen::VectorXd& lambda_p,
                                const Eigen::VectorXd& lambda_k) {
  const double tr = X.trace();
  const double c = tr > 0.0 ? static_cast<double>(X.rows()) / tr : 1.0;
  return {c * X, c * lambda_p, c * lambda_k};
}

double theta_scale(const RinnParams& theta, const DiskMargin& margin, const PlantModel& plant) {
  return 1.0 / std::max(1.0, closed_loop(to_lft(plant, margin), theta).A.norm());
}

}  // namespace

RinnParams project_theta(const RinnParams& reference, const Eigen::MatrixXd& X, const Eigen::VectorXd& lambda_p,
                         const Eigen::VectorXd& lambda_k, const DiskMargin& margin, const PlantModel& plant,
                         const ProjectionOptions& options) {
  check_fixed_multipliers(reference, X, lambda_p, lambda_k, plant);
  margin.validate();
  sdp::SdpProblem problem;
  const ThetaVars v = make_theta_vars(problem, reference.dims);

  const NormalizedMultipliers nm = normalize(X, lambda_p, lambda_k);
  sdp::SymMatrixExpr lmi = schur_lmi_expr(v, reference.dims, nm.X, nm.lambda_p, nm.lambda_k, margin, plant)
                               .scaled(theta_scale(reference, margin, plant));
  const Eigen::Index dim = lmi.dim();
  double shift = std::max(options.theta_margin, sdp::strictness_shift(sdp::kEpsLmi, lmi.constant_term()));
  // A feasible reference must stay feasible.
  const double own = attained_theta_margin(reference, reference, X, lambda_p, lambda_k, margin, plant);
  if (own > 0.0) shift = std::min(shift, 0.5 * own);
  lmi.add_constant(shift * Eigen::MatrixXd::Identity(dim, dim));
  problem.add_nsd(std::move(lmi), "certification");
  zip_theta(v, reference,
            [&](const MatrixExpr& e, const Eigen::MatrixXd& m) { sdp::add_frobenius_distance(problem, e, m); });

  const sdp::SdpSolution sol = sdp::solve(problem, options.solver);
  if (sol.status == sdp::SolveStatus::Infeasible) {
    throw InternalConsistencyError("project_theta: the controller set for the fixed (X, Lambda_p, Lambda_k) is empty");
  }
  if (sol.status != sdp::SolveStatus::Optimal) {
    throw NumericalFailureError("project_theta: solver " + sol.backend_status + ", residual " +
                                std::to_string(sol.residual));
  }
  RinnParams out = RinnParams::zeros(reference.dims, reference.activation);
  out.A_k = v.A_k.evaluate(sol.assignment);
  out.B_kw = v.B_kw.evaluate(sol.assignment);
  out.B_ky = v.B_ky.evaluate(sol.assignment);
  out.C_kv = v.C_kv.evaluate(sol.assignment);
  out.D_kvw = v.D_kvw.evaluate(sol.assignment);
  out.D_kvy = v.D_kvy.evaluate(sol.assignment);
  out.C_ku = v.C_ku.evaluate(sol.assignment);
  out.D_kuw = v.D_kuw.evaluate(sol.assignment);
  out.D_kuy = v.D_kuy.evaluate(sol.assignment);
  return out;
}

double attained_theta_margin(const RinnParams& theta, const RinnParams& reference, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                             const DiskMargin& margin, const PlantModel& plant) {
  const NormalizedMultipliers nm = normalize(X, lambda_p, lambda_k);
  return -theta_scale(reference, margin, plant) *
         sdp::max_eigenvalue(schur_projection_lmi(theta, nm.X, nm.lambda_p, nm.lambda_k, margin, plant));
}

EnforceResult enforce_margin(const RinnParams& theta_prime, const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& lambda_p, const Eigen::VectorXd& lambda_k,
                             const DiskMargin& margin, const PlantModel& plant, const ProjectionOptions& options) {
  ConstructOptions co;
  co.regularize_degenerate = true;
  const ThetaHatConstruction built = construct_theta_hat(theta_prime, X, lambda_k, plant, co);
  const ThetaHat projected = project_theta_hat(built.theta_hat, lambda_p, margin, plant, options);
  // Regularized factors carry no useful coordinates and are badly scaled.
  const Reconstruction rec =
      reconstruct(projected, plant, built.regularized ? std::nullopt : std::optional<ReconFactors>(built.factors));

  EnforceResult out;
  out.regularized = built.regularized;
  out.theta_hat_distance = (projected.flatten() - built.theta_hat.flatten()).norm();
  out.X = rec.X;
  out.lambda_k = rec.lambda_k;
  out.theta = rec.theta;
  out.used_reconstruction = true;

  // The reconstructed controller is a feasible point of the theta-space set;
  // ask for at most half its margin so the projection stays feasible.
  const double attained =
      attained_theta_margin(rec.theta, theta_prime, rec.X, lambda_p, rec.lambda_k, margin, plant);
  if (attained > 0.0) {
    ProjectionOptions po = options;
    po.theta_margin = std::min(options.theta_margin, 0.5 * attained);
    try {
      out.theta = project_theta(theta_prime, rec.X, lambda_p, rec.lambda_k, margin, plant, po);
      out.used_reconstruction = false;
    } catch (const InternalConsistencyError&) {
    } catch (const NumericalFailureError&) {
    }
  }
  out.theta_distance = (flatten(out.theta) - flatten(theta_prime)).norm();
  return out;
}

}  // namespace marginnet
