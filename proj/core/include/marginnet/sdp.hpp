#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace marginnet::sdp {

using VariableId = int;
using Assignment = std::unordered_map<VariableId, double>;

/// Affine matrix-valued expression `C + sum_i x_i F_i` over scalar decision
/// variables. Rectangular; used to assemble the blocks of an LMI before they
/// are placed into a SymMatrixExpr.
class MatrixExpr {
 public:
  MatrixExpr() = default;
  MatrixExpr(Eigen::Index rows, Eigen::Index cols);
  explicit MatrixExpr(Eigen::MatrixXd constant);

  Eigen::Index rows() const { return constant_.rows(); }
  Eigen::Index cols() const { return constant_.cols(); }

  const Eigen::MatrixXd& constant() const { return constant_; }
  const std::map<VariableId, Eigen::MatrixXd>& terms() const { return terms_; }

  void add_term(VariableId id, const Eigen::MatrixXd& coeff);
  void add_constant(const Eigen::MatrixXd& c);

  MatrixExpr transpose() const;
  Eigen::MatrixXd evaluate(const Assignment& assignment) const;

  MatrixExpr& operator+=(const MatrixExpr& other);
  MatrixExpr& operator-=(const MatrixExpr& other);
  MatrixExpr& operator*=(double s);

  friend MatrixExpr operator+(MatrixExpr a, const MatrixExpr& b) { return a += b; }
  friend MatrixExpr operator-(MatrixExpr a, const MatrixExpr& b) { return a -= b; }
  friend MatrixExpr operator-(MatrixExpr a) { return a *= -1.0; }
  friend MatrixExpr operator*(double s, MatrixExpr a) { return a *= s; }
  friend MatrixExpr operator*(MatrixExpr a, double s) { return a *= s; }
  friend MatrixExpr operator*(const Eigen::MatrixXd& left, const MatrixExpr& e);
  friend MatrixExpr operator*(const MatrixExpr& e, const Eigen::MatrixXd& right);

 private:
  Eigen::MatrixXd constant_;
  std::map<VariableId, Eigen::MatrixXd> terms_;
};

/// e + e^T.
MatrixExpr he(const MatrixExpr& e);

/// Affine symmetric matrix expression. Every stored matrix is symmetrized on
/// insertion so the invariant holds regardless of the caller's round-off.
class SymMatrixExpr {
 public:
  struct Term {
    VariableId id;
    Eigen::MatrixXd coeff;
  };

  explicit SymMatrixExpr(Eigen::Index dim = 0);
  explicit SymMatrixExpr(const Eigen::MatrixXd& constant);

  /// Symmetrizes a square MatrixExpr: (e + e^T) / 2.
  static SymMatrixExpr from(const MatrixExpr& e);

  Eigen::Index dim() const { return constant_.rows(); }
  const Eigen::MatrixXd& constant_term() const { return constant_; }
  const std::vector<Term>& coefficient_terms() const { return terms_; }

  void add_term(VariableId id, const Eigen::MatrixXd& coeff);
  void add_constant(const Eigen::MatrixXd& c);
  SymMatrixExpr scaled(double s) const;

 private:
  Eigen::MatrixXd constant_;
  std::vector<Term> terms_;
};

/// Evaluates constant + sum value_i * coeff_i. Throws UnassignedVariableError
/// when a referenced variable is missing from the assignment.
Eigen::MatrixXd evaluate(const SymMatrixExpr& expr, const Assignment& assignment);

/// Assembles a symmetric block matrix from its lower-triangular blocks.
/// Unset blocks are zero.
class SymBlockBuilder {
 public:
  explicit SymBlockBuilder(std::vector<Eigen::Index> sizes);

  void set(int row, int col, const MatrixExpr& block);
  void set(int row, int col, const Eigen::MatrixXd& block) { set(row, col, MatrixExpr(block)); }
  SymMatrixExpr build() const;

 private:
  std::vector<Eigen::Index> sizes_;
  std::vector<Eigen::Index> offsets_;
  std::map<std::pair<int, int>, MatrixExpr> blocks_;
};

struct VariableBounds {
  std::optional<double> lower;
  std::optional<double> upper;
};

/// constant + sum coeff_i x_i.
struct LinearExpr {
  double constant = 0.0;
  std::vector<std::pair<VariableId, double>> terms;
};

enum class Sense { PositiveSemidefinite, NegativeSemidefinite };

struct PsdConstraint {
  SymMatrixExpr expr;
  Sense sense = Sense::PositiveSemidefinite;
  std::string label;
};

struct DistanceTerm {
  VariableId id;
  double reference;
  double weight;
};

class SdpProblem {
 public:
  VariableId add_variable(VariableBounds bounds = {});
  int num_variables() const { return static_cast<int>(bounds_.size()); }
  const VariableBounds& bounds(VariableId id) const { return bounds_.at(id); }
  void set_upper_bound(VariableId id, double upper) { bounds_.at(id).upper = upper; }

  /// expr >= 0.
  void add_psd(SymMatrixExpr expr, std::string label = {});
  /// expr <= 0.
  void add_nsd(SymMatrixExpr expr, std::string label = {});
  /// expr == 0.
  void add_equality(LinearExpr expr);

  /// Adds weight * (x_id - reference)^2 to the objective. With no distance
  /// terms the problem is a pure feasibility problem.
  void add_distance(VariableId id, double reference, double weight = 1.0);

  const std::vector<PsdConstraint>& psd_constraints() const { return psd_; }
  const std::vector<LinearExpr>& equality_constraints() const { return equalities_; }
  /// Adds coeff * x_id to the objective.
  void add_linear_objective(VariableId id, double coeff);

  const std::vector<DistanceTerm>& distance_terms() const { return distance_; }
  const std::vector<std::pair<VariableId, double>>& linear_objective() const { return linear_; }
  bool is_feasibility() const { return distance_.empty() && linear_.empty(); }

  /// Throws if any constraint references an undeclared variable.
  void validate() const;

 private:
  std::vector<VariableBounds> bounds_;
  std::vector<PsdConstraint> psd_;
  std::vector<LinearExpr> equalities_;
  std::vector<DistanceTerm> distance_;
  std::vector<std::pair<VariableId, double>> linear_;
};

enum class SolveStatus { Optimal, Infeasible, NumericalFailure };

const char* to_string(SolveStatus status);

struct SdpSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Assignment assignment;
  // Largest violation over all constraints, measured by eigen-decomposition of
  // each evaluated (sign-adjusted) PSD constraint and directly for bounds and
  // equalities. Zero when every constraint holds.
  double residual = 0.0;
  int iterations = 0;
  std::string backend_status;
};

struct SolverOptions {
  int max_iters = 200;
  double time_limit_s = 0.0;  // 0 = unlimited
  double tol_gap_abs = 1e-9;
  double tol_gap_rel = 1e-9;
  double tol_feas = 1e-9;
  double tol_infeas_abs = 1e-9;
  double tol_infeas_rel = 1e-9;
  // An Optimal status is only reported when residual <= feasibility_tol.
  double feasibility_tol = 1e-8;
  bool verbose = false;
};

/// Solves the problem with the Clarabel interior-point backend.
SdpSolution solve(const SdpProblem& problem, const SolverOptions& options = {});

// Structured decision variables expanded into scalars.
MatrixExpr full_variable(SdpProblem& problem, Eigen::Index rows, Eigen::Index cols);
MatrixExpr symmetric_variable(SdpProblem& problem, Eigen::Index n);
MatrixExpr diagonal_variable(SdpProblem& problem, Eigen::Index n,
                             std::optional<double> lower_bound = std::nullopt);

/// Adds weight * ||expr - reference||_F^2 to the objective. Every entry of
/// expr must be a single variable with unit coefficient or a constant; shared
/// variables (symmetric mirrors) accumulate weight per appearance.
void add_frobenius_distance(SdpProblem& problem, const MatrixExpr& expr,
                            const Eigen::MatrixXd& reference, double weight = 1.0);

/// Zero-padded copy of e occupying rows [r0, r0 + e.rows()) and columns
/// [c0, c0 + e.cols()) of a rows x cols expression.
MatrixExpr embed(const MatrixExpr& e, Eigen::Index r0, Eigen::Index c0, Eigen::Index rows, Eigen::Index cols);

/// Assigns each variable of expr (built by the *_variable helpers) the entry
/// of `value` at the first position it occupies.
void assign_values(const MatrixExpr& expr, const Eigen::MatrixXd& value, Assignment& assignment);

/// Diagonal L with L^T L = diag(lambda).
Eigen::MatrixXd diag_psd_factor(const Eigen::VectorXd& lambda_diag);

double min_eigenvalue(const Eigen::MatrixXd& symmetric);
double max_eigenvalue(const Eigen::MatrixXd& symmetric);

/// eps * max(1, ||constant||_F): the shift used to turn strict inequalities
/// into closed-cone constraints.
double strictness_shift(double eps, const Eigen::MatrixXd& constant);

inline constexpr double kEpsPd = 1e-6;
inline constexpr double kEpsLmi = 1e-7;

}  // namespace marginnet::sdp
