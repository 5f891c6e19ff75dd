#include "marginnet/controller.hpp"

#include <algorithm>
#include <cmath>

#include "marginnet/errors.hpp"
#include "marginnet/sdp.hpp"

namespace marginnet {

double activate(Activation kind, double v) {
  switch (kind) {
    case Activation::Tanh:
      return std::tanh(v);
    case Activation::Relu:
      return v > 0.0 ? v : 0.0;
  }
  return 0.0;
}

double activate_slope(Activation kind, double v) {
  switch (kind) {
    case Activation::Tanh: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
    case Activation::Relu:
      return v > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

std::string to_string(Activation kind) { return kind == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw DomainError("unknown activation '" + name + "' (expected tanh or relu)");
}

RinnParams RinnParams::zeros(ControllerDims d, Activation activation) {
  if (d.nk < 0 || d.nphi < 0 || d.nu <= 0 || d.ny <= 0) throw DimensionError("controller dims must be nonnegative");
  RinnParams t;
  t.dims = d;
  t.activation = activation;
  t.A_k = Eigen::MatrixXd::Zero(d.nk, d.nk);
  t.B_kw = Eigen::MatrixXd::Zero(d.nk, d.nphi);
  t.B_ky = Eigen::MatrixXd::Zero(d.nk, d.ny);
  t.C_kv = Eigen::MatrixXd::Zero(d.nphi, d.nk);
  t.D_kvw = Eigen::MatrixXd::Zero(d.nphi, d.nphi);
  t.D_kvy = Eigen::MatrixXd::Zero(d.nphi, d.ny);
  t.C_ku = Eigen::MatrixXd::Zero(d.nu, d.nk);
  t.D_kuw = Eigen::MatrixXd::Zero(d.nu, d.nphi);
  t.D_kuy = Eigen::MatrixXd::Zero(d.nu, d.ny);
  return t;
}

void RinnParams::validate() const {
  const auto check = [](const Eigen::MatrixXd& m, int r, int c, const char* name) {
    if (m.rows() != r || m.cols() != c) {
      throw DimensionError(std::string("controller: ") + name + " is " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                           std::to_string(c));
    }
  };
  const auto& d = dims;
  if (d.nk < 0 || d.nphi < 0 || d.nu <= 0 || d.ny <= 0) throw DimensionError("controller: invalid dims");
  check(A_k, d.nk, d.nk, "A_k");
  check(B_kw, d.nk, d.nphi, "B_kw");
  check(B_ky, d.nk, d.ny, "B_ky");
  check(C_kv, d.nphi, d.nk, "C_kv");
  check(D_kvw, d.nphi, d.nphi, "D_kvw");
  check(D_kvy, d.nphi, d.ny, "D_kvy");
  check(C_ku, d.nu, d.nk, "C_ku");
  check(D_kuw, d.nu, d.nphi, "D_kuw");
  check(D_kuy, d.nu, d.ny, "D_kuy");
}

bool is_strictly_lower_triangular(const Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i <= std::min<Eigen::Index>(j, m.rows() - 1); ++i) {
      if (m(i, j) != 0.0) return false;
    }
  }
  return true;
}

namespace {

Eigen::VectorXd apply(Activation kind, const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = activate(kind, v(i));
  return out;
}

double residual(const RinnParams& theta, const Eigen::VectorXd& w, const Eigen::VectorXd& offset) {
  return (w - apply(theta.activation, theta.D_kvw * w + offset)).lpNorm<Eigen::Infinity>();
}

bool newton_solve(const RinnParams& theta, const Eigen::VectorXd& offset, Eigen::VectorXd& w,
                  double tolerance, int max_iterations) {
  const Eigen::Index n = w.size();
  const Eigen::MatrixXd& D = theta.D_kvw;
  Eigen::VectorXd v = D * w + offset;
  Eigen::VectorXd F = w - apply(theta.activation, v);
  double f_norm = F.lpNorm<Eigen::Infinity>();
  Eigen::MatrixXd J(n, n);
  for (int it = 0; it < max_iterations; ++it) {
    if (f_norm <= tolerance) return true;
    for (Eigen::Index i = 0; i < n; ++i) J.row(i) = -activate_slope(theta.activation, v(i)) * D.row(i);
    J.diagonal().array() += 1.0;
    const Eigen::VectorXd step = J.partialPivLu().solve(-F);
    if (!step.allFinite()) return false;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd trial = w + t * step;
      const Eigen::VectorXd trial_v = D * trial + offset;
      const Eigen::VectorXd trial_F = trial - apply(theta.activation, trial_v);
      const double trial_norm = trial_F.lpNorm<Eigen::Infinity>();
      if (trial_norm < (1.0 - 1e-4 * t) * f_norm) {
        w = trial;
        v = trial_v;
        F = trial_F;
        f_norm = trial_norm;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) return f_norm <= tolerance;
  }
  return f_norm <= tolerance;
}

}  // namespace

Eigen::VectorXd solve_activations(const RinnParams& theta, const Eigen::VectorXd& offset,
                                  const Eigen::VectorXd& warm_start, const ImplicitSolveOptions& options) {
  const Eigen::Index n = theta.dims.nphi;
  if (offset.size() != n) throw DimensionError("solve_activations: offset size mismatch");
  if (n == 0) return Eigen::VectorXd(0);
  const Eigen::MatrixXd& D = theta.D_kvw;

  if (is_strictly_lower_triangular(D)) {
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = offset(i) + D.row(i).head(i).dot(w.head(i));
      w(i) = activate(theta.activation, v);
    }
    return w;
  }

  Eigen::VectorXd w = warm_start.size() == n ? warm_start : Eigen::VectorXd::Zero(n);
  if (!w.allFinite()) w.setZero();
  // Newton from the warm start converges in a step or two along a
  // trajectory; damped Picard is the fallback that converges whenever the
  // well-posedness LMI holds.
  Eigen::VectorXd newton_w = w;
  if (newton_solve(theta, offset, newton_w, options.tolerance, 8)) return newton_w;

  const double eta = options.damping;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd target = apply(theta.activation, D * w + offset);
    const double change = (target - w).lpNorm<Eigen::Infinity>();
    if (change <= options.tolerance) return target;
    w = (1.0 - eta) * w + eta * target;
    if (!w.allFinite()) break;
  }

  if (!w.allFinite()) w.setZero();
  if (newton_solve(theta, offset, w, options.tolerance, 100)) return w;
  throw WellPosednessError("implicit activation equation did not converge (residual " +
                           std::to_string(residual(theta, w, offset)) + ")");
}

ControllerOutput forward(const RinnParams& theta, const Eigen::VectorXd& x_k, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& warm_start, const ImplicitSolveOptions& options) {
  if (x_k.size() != theta.dims.nk) throw DimensionError("forward: controller state size mismatch");
  if (y.size() != theta.dims.ny) throw DimensionError("forward: measurement size mismatch");
  ControllerOutput out;
  const Eigen::VectorXd offset = theta.C_kv * x_k + theta.D_kvy * y;
  out.w_k = solve_activations(theta, offset, warm_start, options);
  out.x_k_dot = theta.A_k * x_k + theta.B_kw * out.w_k + theta.B_ky * y;
  out.u_tilde = theta.C_ku * x_k + theta.D_kuw * out.w_k + theta.D_kuy * y;
  return out;
}

bool well_posed(const RinnParams& theta, const Eigen::VectorXd& lambda_k) {
  const Eigen::Index n = theta.dims.nphi;
  if (lambda_k.size() != n) throw DimensionError("well_posed: lambda_k size mismatch");
  if (n == 0) return true;
  if ((lambda_k.array() <= 0.0).any()) return false;
  const Eigen::MatrixXd L = lambda_k.asDiagonal();
  const Eigen::MatrixXd LD = L * theta.D_kvw;
  const Eigen::MatrixXd m = LD + LD.transpose() - 2.0 * L;
  return sdp::max_eigenvalue(m) < -1e-10;
}

RinnParams embed_feedforward(std::span<const Eigen::MatrixXd> weights, Activation activation) {
  if (weights.size() < 2) throw DimensionError("embed_feedforward: need at least W_0 and W_1");
  const std::size_t L = weights.size() - 1;
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    if (weights[l + 1].cols() != weights[l].rows()) {
      throw DimensionError("embed_feedforward: W_" + std::to_string(l + 1) + " columns do not match W_" +
                           std::to_string(l) + " rows");
    }
  }
  // Hidden layers w_1 .. w_L have sizes rows(W_0) .. rows(W_{L-1}).
  std::vector<Eigen::Index> offsets(L + 1, 0);
  for (std::size_t l = 0; l < L; ++l) offsets[l + 1] = offsets[l] + weights[l].rows();

  ControllerDims d;
  d.nk = 0;
  d.nphi = static_cast<int>(offsets[L]);
  d.ny = static_cast<int>(weights.front().cols());
  d.nu = static_cast<int>(weights.back().rows());
  RinnParams t = RinnParams::zeros(d, activation);

  t.D_kvy.topRows(weights[0].rows()) = weights[0];
  for (std::size_t l = 1; l < L; ++l) {
    // w_{l+1} = phi(W_l w_l): block row l, block column l - 1.
    t.D_kvw.block(offsets[l], offsets[l - 1], weights[l].rows(), weights[l].cols()) = weights[l];
  }
  t.D_kuw.rightCols(weights[L].cols()) = weights[L];
  return t;
}

std::size_t parameter_count(const ControllerDims& d) {
  const std::size_t nk = d.nk, nphi = d.nphi, nu = d.nu, ny = d.ny;
  return nk * nk + nk * nphi + nk * ny + nphi * nk + nphi * nphi + nphi * ny + nu * nk + nu * nphi +
         nu * ny;
}

namespace {

template <typename Fn>
void for_each_matrix(RinnParams& t, Fn&& fn) {
  fn(t.A_k);
  fn(t.B_kw);
  fn(t.B_ky);
  fn(t.C_kv);
  fn(t.D_kvw);
  fn(t.D_kvy);
  fn(t.C_ku);
  fn(t.D_kuw);
  fn(t.D_kuy);
}

}  // namespace

Eigen::VectorXd flatten(const RinnParams& theta) {
  theta.validate();
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count(theta.dims)));
  Eigen::Index pos = 0;
  RinnParams& t = const_cast<RinnParams&>(theta);
  for_each_matrix(t, [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out(pos++) = m(i, j);
    }
  });
  return out;
}

RinnParams unflatten(const Eigen::VectorXd& params, const ControllerDims& dims, Activation activation) {
  if (static_cast<std::size_t>(params.size()) != parameter_count(dims)) {
    throw DimensionError("unflatten: expected " + std::to_string(parameter_count(dims)) + " parameters, got " +
                         std::to_string(params.size()));
  }
  RinnParams t = RinnParams::zeros(dims, activation);
  Eigen::Index pos = 0;
  for_each_matrix(t, [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = params(pos++);
    }
  });
  return t;
}

}  // namespace marginnet
