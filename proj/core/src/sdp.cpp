#include "marginnet/sdp.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/SparseCore>

#include "marginnet/errors.hpp"

extern "C" {
struct ClarabelFfiSettings {
  std::uint32_t max_iter;
  double time_limit;
  double tol_gap_abs;
  double tol_gap_rel;
  double tol_feas;
  double tol_infeas_abs;
  double tol_infeas_rel;
  int verbose;
};
struct ClarabelFfiInfo {
  int status;
  std::uint32_t iterations;
  double primal_objective;
  double solve_time;
};
int clarabel_ffi_solve(std::int64_t n, std::int64_t m, const std::int64_t* p_colptr, const std::int64_t* p_rowval,
                       const double* p_nzval, const double* q, const std::int64_t* a_colptr,
                       const std::int64_t* a_rowval, const double* a_nzval, const double* b, std::int64_t n_zero,
                       std::int64_t n_nonneg, std::int64_t n_psd, const std::int64_t* psd_dims,
                       const ClarabelFfiSettings* settings, double* x_out, ClarabelFfiInfo* info);
}

namespace marginnet::sdp {

namespace {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) +
                         "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                         "x" + std::to_string(b.cols()) + ")");
  }
}

double lookup(const Assignment& assignment, VariableId id) {
  auto it = assignment.find(id);
  if (it == assignment.end()) {
    throw UnassignedVariableError("variable " + std::to_string(id) + " has no assigned value");
  }
  return it->second;
}

}  // namespace

// ---------------------------------------------------------------- MatrixExpr

MatrixExpr::MatrixExpr(Eigen::Index rows, Eigen::Index cols)
    : constant_(Eigen::MatrixXd::Zero(rows, cols)) {}

MatrixExpr::MatrixExpr(Eigen::MatrixXd constant) : constant_(std::move(constant)) {}

void MatrixExpr::add_term(VariableId id, const Eigen::MatrixXd& coeff) {
  require_same_shape(constant_, coeff, "MatrixExpr::add_term");
  auto [it, inserted] = terms_.try_emplace(id, coeff);
  if (!inserted) it->second += coeff;
}

void MatrixExpr::add_constant(const Eigen::MatrixXd& c) {
  require_same_shape(constant_, c, "MatrixExpr::add_constant");
  constant_ += c;
}

MatrixExpr MatrixExpr::transpose() const {
  MatrixExpr out(constant_.transpose());
  for (const auto& [id, coeff] : terms_) out.terms_.emplace(id, coeff.transpose());
  return out;
}

Eigen::MatrixXd MatrixExpr::evaluate(const Assignment& assignment) const {
  Eigen::MatrixXd out = constant_;
  for (const auto& [id, coeff] : terms_) out += lookup(assignment, id) * coeff;
  return out;
}

MatrixExpr& MatrixExpr::operator+=(const MatrixExpr& other) {
  require_same_shape(constant_, other.constant_, "MatrixExpr::operator+=");
  constant_ += other.constant_;
  for (const auto& [id, coeff] : other.terms_) add_term(id, coeff);
  return *this;
}

MatrixExpr& MatrixExpr::operator-=(const MatrixExpr& other) {
  require_same_shape(constant_, other.constant_, "MatrixExpr::operator-=");
  constant_ -= other.constant_;
  for (const auto& [id, coeff] : other.terms_) add_term(id, -coeff);
  return *this;
}

MatrixExpr& MatrixExpr::operator*=(double s) {
  constant_ *= s;
  for (auto& [id, coeff] : terms_) coeff *= s;
  return *this;
}

MatrixExpr operator*(const Eigen::MatrixXd& left, const MatrixExpr& e) {
  if (left.cols() != e.rows()) throw DimensionError("constant * MatrixExpr: inner dimension mismatch");
  MatrixExpr out(left * e.constant_);
  for (const auto& [id, coeff] : e.terms_) out.terms_.emplace(id, left * coeff);
  return out;
}

MatrixExpr operator*(const MatrixExpr& e, const Eigen::MatrixXd& right) {
  if (e.cols() != right.rows()) throw DimensionError("MatrixExpr * constant: inner dimension mismatch");
  MatrixExpr out(e.constant_ * right);
  for (const auto& [id, coeff] : e.terms_) out.terms_.emplace(id, coeff * right);
  return out;
}

MatrixExpr he(const MatrixExpr& e) { return e + e.transpose(); }

// ------------------------------------------------------------- SymMatrixExpr

SymMatrixExpr::SymMatrixExpr(Eigen::Index dim) : constant_(Eigen::MatrixXd::Zero(dim, dim)) {}

SymMatrixExpr::SymMatrixExpr(const Eigen::MatrixXd& constant) {
  if (constant.rows() != constant.cols()) throw DimensionError("SymMatrixExpr: constant must be square");
  constant_ = symmetrize(constant);
}

SymMatrixExpr SymMatrixExpr::from(const MatrixExpr& e) {
  if (e.rows() != e.cols()) throw DimensionError("SymMatrixExpr::from: expression must be square");
  SymMatrixExpr out(e.constant());
  for (const auto& [id, coeff] : e.terms()) out.add_term(id, coeff);
  return out;
}

void SymMatrixExpr::add_term(VariableId id, const Eigen::MatrixXd& coeff) {
  require_same_shape(constant_, coeff, "SymMatrixExpr::add_term");
  auto it = std::find_if(terms_.begin(), terms_.end(), [id](const Term& t) { return t.id == id; });
  if (it == terms_.end()) {
    terms_.push_back({id, symmetrize(coeff)});
  } else {
    it->coeff += symmetrize(coeff);
  }
}

void SymMatrixExpr::add_constant(const Eigen::MatrixXd& c) {
  require_same_shape(constant_, c, "SymMatrixExpr::add_constant");
  constant_ += symmetrize(c);
}

SymMatrixExpr SymMatrixExpr::scaled(double s) const {
  SymMatrixExpr out = *this;
  out.constant_ *= s;
  for (auto& t : out.terms_) t.coeff *= s;
  return out;
}

Eigen::MatrixXd evaluate(const SymMatrixExpr& expr, const Assignment& assignment) {
  Eigen::MatrixXd out = expr.constant_term();
  for (const auto& t : expr.coefficient_terms()) out += lookup(assignment, t.id) * t.coeff;
  return symmetrize(out);
}

// ----------------------------------------------------------- SymBlockBuilder

SymBlockBuilder::SymBlockBuilder(std::vector<Eigen::Index> sizes) : sizes_(std::move(sizes)) {
  offsets_.resize(sizes_.size() + 1, 0);
  std::partial_sum(sizes_.begin(), sizes_.end(), offsets_.begin() + 1);
}

void SymBlockBuilder::set(int row, int col, const MatrixExpr& block) {
  if (row < col) {
    set(col, row, block.transpose());
    return;
  }
  const auto n = static_cast<int>(sizes_.size());
  if (row >= n || col < 0) throw DimensionError("SymBlockBuilder::set: block index out of range");
  if (block.rows() != sizes_[row] || block.cols() != sizes_[col]) {
    throw DimensionError("SymBlockBuilder::set: block (" + std::to_string(row) + "," +
                         std::to_string(col) + ") has shape " + std::to_string(block.rows()) + "x" +
                         std::to_string(block.cols()) + ", expected " + std::to_string(sizes_[row]) +
                         "x" + std::to_string(sizes_[col]));
  }
  blocks_.insert_or_assign({row, col}, block);
}

SymMatrixExpr SymBlockBuilder::build() const {
  const Eigen::Index dim = offsets_.back();
  Eigen::MatrixXd constant = Eigen::MatrixXd::Zero(dim, dim);
  std::map<VariableId, Eigen::MatrixXd> coeffs;

  auto place = [&](Eigen::MatrixXd& target, int r, int c, const Eigen::MatrixXd& block) {
    target.block(offsets_[r], offsets_[c], sizes_[r], sizes_[c]) += block;
    if (r != c) target.block(offsets_[c], offsets_[r], sizes_[c], sizes_[r]) += block.transpose();
  };

  for (const auto& [rc, block] : blocks_) {
    const auto [r, c] = rc;
    place(constant, r, c, block.constant());
    for (const auto& [id, coeff] : block.terms()) {
      auto [it, inserted] = coeffs.try_emplace(id, Eigen::MatrixXd::Zero(dim, dim));
      place(it->second, r, c, coeff);
    }
  }

  SymMatrixExpr out(constant);
  for (const auto& [id, coeff] : coeffs) out.add_term(id, coeff);
  return out;
}

// ---------------------------------------------------------------- SdpProblem

VariableId SdpProblem::add_variable(VariableBounds bounds) {
  bounds_.push_back(bounds);
  return static_cast<VariableId>(bounds_.size() - 1);
}

void SdpProblem::add_psd(SymMatrixExpr expr, std::string label) {
  psd_.push_back({std::move(expr), Sense::PositiveSemidefinite, std::move(label)});
}

void SdpProblem::add_nsd(SymMatrixExpr expr, std::string label) {
  psd_.push_back({std::move(expr), Sense::NegativeSemidefinite, std::move(label)});
}

void SdpProblem::add_equality(LinearExpr expr) { equalities_.push_back(std::move(expr)); }

void SdpProblem::add_distance(VariableId id, double reference, double weight) {
  if (weight < 0.0) throw DomainError("distance weight must be nonnegative");
  distance_.push_back({id, reference, weight});
}

void SdpProblem::add_linear_objective(VariableId id, double coeff) { linear_.emplace_back(id, coeff); }

void SdpProblem::validate() const {
  const int n = num_variables();
  auto check = [n](VariableId id, const std::string& where) {
    if (id < 0 || id >= n) {
      throw UnassignedVariableError(where + " references undeclared variable " + std::to_string(id));
    }
  };
  for (const auto& c : psd_) {
    for (const auto& t : c.expr.coefficient_terms()) check(t.id, "PSD constraint '" + c.label + "'");
  }
  for (const auto& e : equalities_) {
    for (const auto& [id, coeff] : e.terms) check(id, "equality constraint");
  }
  for (const auto& d : distance_) check(d.id, "distance objective");
  for (const auto& [id, coeff] : linear_) check(id, "linear objective");
  for (const auto& b : bounds_) {
    if (b.lower && b.upper && *b.lower > *b.upper) throw DomainError("variable lower bound exceeds upper bound");
  }
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal:
      return "optimal";
    case SolveStatus::Infeasible:
      return "infeasible";
    case SolveStatus::NumericalFailure:
      return "numerical_failure";
  }
  return "unknown";
}

// --------------------------------------------------------------------- solve

namespace {

// The backend vectorizes a symmetric n x n matrix over the upper triangle,
// column by column, with off-diagonal entries scaled by sqrt(2).
template <typename Fn>
void for_each_svec(Eigen::Index n, Fn&& fn) {
  const double sqrt2 = std::sqrt(2.0);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i, ++k) fn(k, i, j, i == j ? 1.0 : sqrt2);
  }
}

using Triplet = Eigen::Triplet<double, std::int64_t>;
using CscMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, std::int64_t>;

const char* clarabel_status_name(int code) {
  switch (code) {
    case 0: return "unsolved";
    case 1: return "solved";
    case 2: return "primal_infeasible";
    case 3: return "dual_infeasible";
    case 4: return "almost_solved";
    case 5: return "almost_primal_infeasible";
    case 6: return "almost_dual_infeasible";
    case 7: return "max_iterations";
    case 8: return "max_time";
    case 9: return "numerical_error";
    case 10: return "insufficient_progress";
    default: return "other";
  }
}

double constraint_violation(const SdpProblem& problem, const Assignment& a) {
  double worst = 0.0;
  for (const auto& c : problem.psd_constraints()) {
    Eigen::MatrixXd m = evaluate(c.expr, a);
    if (c.sense == Sense::NegativeSemidefinite) m = -m;
    if (m.rows() == 0) continue;
    worst = std::max(worst, -min_eigenvalue(m));
  }
  for (const auto& e : problem.equality_constraints()) {
    double v = e.constant;
    for (const auto& [id, coeff] : e.terms) v += coeff * lookup(a, id);
    worst = std::max(worst, std::abs(v));
  }
  for (int id = 0; id < problem.num_variables(); ++id) {
    const auto& b = problem.bounds(id);
    const double x = lookup(a, id);
    if (b.lower) worst = std::max(worst, *b.lower - x);
    if (b.upper) worst = std::max(worst, x - *b.upper);
  }
  return worst;
}

}  // namespace

SdpSolution solve(const SdpProblem& problem, const SolverOptions& options) {
  problem.validate();
  const int n = problem.num_variables();

  // Row layout: zero cone (equalities), nonnegative cone (bounds), PSD cones,
  // with A x + s = b.
  std::vector<Triplet> triplets;
  std::vector<double> b;
  std::int64_t row = 0;

  const auto n_eq = static_cast<std::int64_t>(problem.equality_constraints().size());
  for (const auto& e : problem.equality_constraints()) {
    for (const auto& [id, coeff] : e.terms) triplets.emplace_back(row, id, coeff);
    b.push_back(-e.constant);
    ++row;
  }

  std::int64_t n_lin = 0;
  for (int id = 0; id < n; ++id) {
    const auto& bd = problem.bounds(id);
    if (bd.lower) {  // s = x - lower >= 0
      triplets.emplace_back(row++, id, -1.0);
      b.push_back(-*bd.lower);
      ++n_lin;
    }
    if (bd.upper) {  // s = upper - x >= 0
      triplets.emplace_back(row++, id, 1.0);
      b.push_back(*bd.upper);
      ++n_lin;
    }
  }

  std::vector<std::int64_t> psd_dims;
  for (const auto& c : problem.psd_constraints()) {
    const Eigen::Index dim = c.expr.dim();
    if (dim == 0) continue;
    const double sign = c.sense == Sense::PositiveSemidefinite ? 1.0 : -1.0;
    // s = sign * (C + sum x_i F_i)  =>  b = sign * C, A_i = -sign * F_i.
    const std::int64_t row0 = row;
    for_each_svec(dim, [&](Eigen::Index k, Eigen::Index i, Eigen::Index j, double scale) {
      b.push_back(scale * sign * c.expr.constant_term()(i, j));
      (void)k;
    });
    for (const auto& t : c.expr.coefficient_terms()) {
      for_each_svec(dim, [&](Eigen::Index k, Eigen::Index i, Eigen::Index j, double scale) {
        const double v = -scale * sign * t.coeff(i, j);
        if (v != 0.0) triplets.emplace_back(row0 + k, t.id, v);
      });
    }
    psd_dims.push_back(dim);
    row += dim * (dim + 1) / 2;
  }
  const std::int64_t m = row;

  if (n == 0) {
    // Nothing to optimize; check the constant constraints directly.
    SdpSolution sol;
    sol.residual = constraint_violation(problem, {});
    sol.status = sol.residual <= options.feasibility_tol ? SolveStatus::Optimal : SolveStatus::Infeasible;
    sol.backend_status = "trivial";
    return sol;
  }

  CscMatrix A(m, n);
  A.setFromTriplets(triplets.begin(), triplets.end());
  A.makeCompressed();

  std::vector<double> q(static_cast<std::size_t>(n), 0.0);
  std::vector<double> p_diag(static_cast<std::size_t>(n), 0.0);
  for (const auto& d : problem.distance_terms()) {
    // w (x - r)^2 = w x^2 - 2 w r x + const; the backend minimizes 0.5 x'Px + q'x.
    p_diag[d.id] += 2.0 * d.weight;
    q[d.id] += -2.0 * d.weight * d.reference;
  }
  for (const auto& [id, coeff] : problem.linear_objective()) q[id] += coeff;
  CscMatrix P(n, n);
  {
    std::vector<Triplet> pt;
    for (int i = 0; i < n; ++i) {
      if (p_diag[i] != 0.0) pt.emplace_back(i, i, p_diag[i]);
    }
    P.setFromTriplets(pt.begin(), pt.end());
    P.makeCompressed();
  }

  ClarabelFfiSettings settings{};
  settings.max_iter = static_cast<std::uint32_t>(std::max(1, options.max_iters));
  settings.time_limit = options.time_limit_s;
  settings.tol_gap_abs = options.tol_gap_abs;
  settings.tol_gap_rel = options.tol_gap_rel;
  settings.tol_feas = options.tol_feas;
  settings.tol_infeas_abs = options.tol_infeas_abs;
  settings.tol_infeas_rel = options.tol_infeas_rel;
  settings.verbose = options.verbose ? 1 : 0;

  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  ClarabelFfiInfo info{};
  const int rc = clarabel_ffi_solve(n, m, P.outerIndexPtr(), P.innerIndexPtr(), P.valuePtr(), q.data(),
                                    A.outerIndexPtr(), A.innerIndexPtr(), A.valuePtr(), b.data(), n_eq, n_lin,
                                    static_cast<std::int64_t>(psd_dims.size()), psd_dims.data(), &settings,
                                    x.data(), &info);
  SdpSolution sol;
  if (rc != 0) {
    sol.status = SolveStatus::NumericalFailure;
    sol.backend_status = "setup failed (code " + std::to_string(rc) + ")";
    return sol;
  }
  sol.iterations = static_cast<int>(info.iterations);
  sol.backend_status = clarabel_status_name(info.status);
  for (int i = 0; i < n; ++i) sol.assignment.emplace(i, x[i]);
  sol.residual = constraint_violation(problem, sol.assignment);

  if (info.status == 2 || info.status == 5) {
    sol.status = SolveStatus::Infeasible;
  } else if ((info.status == 1 || info.status == 4) && sol.residual <= options.feasibility_tol) {
    sol.status = SolveStatus::Optimal;
  } else {
    sol.status = SolveStatus::NumericalFailure;
  }
  return sol;
}

// --------------------------------------------------------------- helpers

MatrixExpr full_variable(SdpProblem& problem, Eigen::Index rows, Eigen::Index cols) {
  MatrixExpr out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(rows, cols);
      e(i, j) = 1.0;
      out.add_term(problem.add_variable(), e);
    }
  }
  return out;
}

MatrixExpr symmetric_variable(SdpProblem& problem, Eigen::Index n) {
  MatrixExpr out(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
      e(i, j) = 1.0;
      e(j, i) = 1.0;
      out.add_term(problem.add_variable(), e);
    }
  }
  return out;
}

MatrixExpr diagonal_variable(SdpProblem& problem, Eigen::Index n, std::optional<double> lower_bound) {
  MatrixExpr out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
    e(i, i) = 1.0;
    out.add_term(problem.add_variable({lower_bound, std::nullopt}), e);
  }
  return out;
}

void add_frobenius_distance(SdpProblem& problem, const MatrixExpr& expr,
                            const Eigen::MatrixXd& reference, double weight) {
  if (expr.rows() != reference.rows() || expr.cols() != reference.cols()) {
    throw DimensionError("add_frobenius_distance: reference shape mismatch");
  }
  for (const auto& [id, coeff] : expr.terms()) {
    double total_weight = 0.0;
    double weighted_ref = 0.0;
    for (Eigen::Index i = 0; i < coeff.rows(); ++i) {
      for (Eigen::Index j = 0; j < coeff.cols(); ++j) {
        const double c = coeff(i, j);
        if (c == 0.0) continue;
        if (c != 1.0 || expr.constant()(i, j) != 0.0) {
          throw DomainError("add_frobenius_distance: entries must be plain decision variables");
        }
        total_weight += weight;
        weighted_ref += weight * reference(i, j);
      }
    }
    if (total_weight > 0.0) problem.add_distance(id, weighted_ref / total_weight, total_weight);
  }
}

MatrixExpr embed(const MatrixExpr& e, Eigen::Index r0, Eigen::Index c0, Eigen::Index rows, Eigen::Index cols) {
  if (r0 < 0 || c0 < 0 || r0 + e.rows() > rows || c0 + e.cols() > cols) {
    throw DimensionError("embed: block does not fit");
  }
  MatrixExpr out(rows, cols);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(rows, cols);
  c.block(r0, c0, e.rows(), e.cols()) = e.constant();
  out.add_constant(c);
  for (const auto& [id, coeff] : e.terms()) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
    m.block(r0, c0, e.rows(), e.cols()) = coeff;
    out.add_term(id, m);
  }
  return out;
}

void assign_values(const MatrixExpr& expr, const Eigen::MatrixXd& value, Assignment& assignment) {
  if (expr.rows() != value.rows() || expr.cols() != value.cols()) {
    throw DimensionError("assign_values: value shape mismatch");
  }
  for (const auto& [id, coeff] : expr.terms()) {
    bool found = false;
    for (Eigen::Index j = 0; j < coeff.cols() && !found; ++j) {
      for (Eigen::Index i = 0; i < coeff.rows() && !found; ++i) {
        if (coeff(i, j) != 0.0) {
          assignment[id] = value(i, j) / coeff(i, j);
          found = true;
        }
      }
    }
  }
}

Eigen::MatrixXd diag_psd_factor(const Eigen::VectorXd& lambda_diag) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(lambda_diag.size(), lambda_diag.size());
  for (Eigen::Index i = 0; i < lambda_diag.size(); ++i) {
    if (!(lambda_diag(i) >= 0.0)) {
      throw DomainError("diag_psd_factor: entry " + std::to_string(i) + " is negative");
    }
    out(i, i) = std::sqrt(lambda_diag(i));
  }
  return out;
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  if (symmetric.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double max_eigenvalue(const Eigen::MatrixXd& symmetric) {
  if (symmetric.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

double strictness_shift(double eps, const Eigen::MatrixXd& constant) {
  return eps * std::max(1.0, constant.norm());
}

}  // namespace marginnet::sdp
