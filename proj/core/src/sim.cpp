#include "marginnet/sim.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

namespace marginnet {

std::vector<InitRange> default_init_ranges(int n_p) {
  if (n_p == 4) return {{-1.0, 1.0}, {-0.44, 0.44}, {-0.25, 0.25}, {-2.0, 2.0}};
  if (n_p == 2) return {{-1.0, 1.0}, {-0.25, 0.25}};
  return std::vector<InitRange>(static_cast<std::size_t>(std::max(n_p, 0)), InitRange{-1.0, 1.0});
}

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("sim: dt must be positive");
  if (!(horizon >= dt)) throw DomainError("sim: horizon must be at least dt");
  if (!(input_saturation > 0.0)) throw DomainError("sim: input_saturation must be positive");
  for (const auto& r : init_ranges) {
    if (!(r.lo <= r.hi)) throw DomainError("sim: init range has lo > hi");
  }
}

int SimConfig::steps() const { return static_cast<int>(std::llround(horizon / dt)); }

const char* to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::None:
      return "none";
    case PerturbationKind::ConstantGain:
      return "constant_gain";
    case PerturbationKind::StaticDelta:
      return "static_delta";
    case PerturbationKind::TimeVaryingDelta:
      return "time_varying_delta";
  }
  return "unknown";
}

PerturbationSpec PerturbationSpec::constant_gain(double gamma) {
  PerturbationSpec p;
  p.kind = PerturbationKind::ConstantGain;
  p.gamma = gamma;
  return p;
}

PerturbationSpec PerturbationSpec::static_delta(Eigen::VectorXd delta, double sigma) {
  PerturbationSpec p;
  p.kind = PerturbationKind::StaticDelta;
  p.delta = std::move(delta);
  p.sigma = sigma;
  return p;
}

PerturbationSpec PerturbationSpec::time_varying(double bound, std::uint64_t waveform_seed, double sigma) {
  if (!(bound >= 0.0)) throw DomainError("time-varying delta bound must be nonnegative");
  PerturbationSpec p;
  p.kind = PerturbationKind::TimeVaryingDelta;
  p.bound = bound;
  p.waveform_seed = waveform_seed;
  p.sigma = sigma;
  return p;
}

double delta_gain(double delta, double sigma) {
  const double den = 1.0 - 0.5 * delta * (1.0 + sigma);
  if (!(den > 0.0)) throw DomainError("delta_gain: interconnection is ill-posed for this delta");
  return (1.0 + 0.5 * delta * (1.0 - sigma)) / den;
}

DeltaWaveform::DeltaWaveform(int channels, double bound, double horizon, double dt, std::uint64_t seed)
    : tones_(static_cast<std::size_t>(channels)), scale_(Eigen::VectorXd::Zero(channels)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.2, 1.0);
  std::uniform_real_distribution<double> freq(0.1, 5.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (auto& ch : tones_) {
    ch.resize(8);
    for (auto& t : ch) t = {amp(rng), 2.0 * std::numbers::pi * freq(rng), phase(rng)};
  }
  const long steps = std::max(1L, std::lround(horizon / dt));
  for (int c = 0; c < channels; ++c) {
    double peak = 0.0;
    for (long k = 0; k <= steps; ++k) {
      double v = 0.0;
      for (const auto& t : tones_[c]) v += t.amplitude * std::sin(t.omega * k * dt + t.phase);
      peak = std::max(peak, std::abs(v));
    }
    scale_(c) = peak > 0.0 ? 0.95 * bound / peak : 0.0;
  }
}

Eigen::VectorXd DeltaWaveform::operator()(double t) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(tones_.size()));
  for (std::size_t c = 0; c < tones_.size(); ++c) {
    double v = 0.0;
    for (const auto& tone : tones_[c]) v += tone.amplitude * std::sin(tone.omega * t + tone.phase);
    out(static_cast<Eigen::Index>(c)) = scale_(static_cast<Eigen::Index>(c)) * v;
  }
  return out;
}

void Trajectory::write_csv(std::ostream& os) const {
  const Eigen::Index nx = plant_states.empty() ? 0 : plant_states.front().size();
  const Eigen::Index nk = controller_states.empty() ? 0 : controller_states.front().size();
  const Eigen::Index nu = u_raw.empty() ? 0 : u_raw.front().size();
  os << "t";
  for (Eigen::Index i = 1; i <= nx; ++i) os << ",x" << i;
  for (Eigen::Index i = 1; i <= nk; ++i) os << ",xk" << i;
  const auto u_cols = [&](const char* name) {
    if (nu == 1) {
      os << ',' << name;
    } else {
      for (Eigen::Index i = 1; i <= nu; ++i) os << ',' << name << i;
    }
  };
  u_cols("u_raw");
  u_cols("u_sat");
  os << ",reward\n";
  const auto prev = os.precision(17);
  for (std::size_t s = 0; s < times.size(); ++s) {
    os << times[s];
    for (Eigen::Index i = 0; i < nx; ++i) os << ',' << plant_states[s](i);
    for (Eigen::Index i = 0; i < nk; ++i) os << ',' << controller_states[s](i);
    for (Eigen::Index i = 0; i < nu; ++i) os << ',' << u_raw[s](i);
    for (Eigen::Index i = 0; i < nu; ++i) os << ',' << u_sat[s](i);
    os << ',' << rewards[s] << '\n';
  }
  os.precision(prev);
}

Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                         const Eigen::VectorXd& k1, int step_index) {
  if (!(dt > 0.0)) throw DomainError("rk4_step: dt must be positive");
  const Eigen::VectorXd k2 = f(x + 0.5 * dt * k1, u);
  const Eigen::VectorXd k3 = f(x + 0.5 * dt * k2, u);
  const Eigen::VectorXd k4 = f(x + dt * k3, u);
  Eigen::VectorXd next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) {
    throw DivergenceError("rk4_step: non-finite state at step " + std::to_string(step_index), step_index);
  }
  return next;
}

Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                         int step_index) {
  if (!(dt > 0.0)) throw DomainError("rk4_step: dt must be positive");
  return rk4_step(f, x, u, dt, f(x, u), step_index);
}

double reward(const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return std::exp(-x.squaredNorm()) + std::exp(-u.squaredNorm());
}

Eigen::VectorXd sample_initial_state(const SimConfig& cfg, int n_p, std::uint64_t seed) {
  const std::vector<InitRange> ranges = cfg.init_ranges.empty() ? default_init_ranges(n_p) : cfg.init_ranges;
  if (static_cast<int>(ranges.size()) != n_p) throw DimensionError("sim: init_ranges size does not match the plant");
  std::mt19937_64 rng(seed);
  Eigen::VectorXd x(n_p);
  for (int i = 0; i < n_p; ++i) {
    std::uniform_real_distribution<double> d(ranges[i].lo, ranges[i].hi);
    x(i) = ranges[i].lo == ranges[i].hi ? ranges[i].lo : d(rng);
  }
  return x;
}

namespace {

constexpr double kDivergenceNorm = 1e9;

Eigen::VectorXd perturb(const PerturbationSpec& pert, const Eigen::VectorXd& u_tilde, double t,
                        const std::optional<DeltaWaveform>& waveform) {
  switch (pert.kind) {
    case PerturbationKind::None:
      return u_tilde;
    case PerturbationKind::ConstantGain:
      return pert.gamma * u_tilde;
    case PerturbationKind::StaticDelta: {
      Eigen::VectorXd u = u_tilde;
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) *= delta_gain(pert.delta(i), pert.sigma);
      return u;
    }
    case PerturbationKind::TimeVaryingDelta: {
      const Eigen::VectorXd d = (*waveform)(t);
      Eigen::VectorXd u = u_tilde;
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) *= delta_gain(d(i), pert.sigma);
      return u;
    }
  }
  return u_tilde;
}

}  // namespace

Trajectory rollout(const PlantModel& plant, const RinnParams& theta, const SimConfig& cfg,
                   const PerturbationSpec& pert, const Eigen::VectorXd& x0, const RolloutOptions& options) {
  plant.validate();
  theta.validate();
  cfg.validate();
  const int np = plant.n_p(), nk = theta.dims.nk, nu = plant.n_u();
  if (theta.dims.nu != nu || theta.dims.ny != plant.n_y()) {
    throw DimensionError("rollout: controller does not match the simulated plant");
  }
  if (x0.size() != np) throw DimensionError("rollout: x0 size does not match the plant");
  if (pert.kind == PerturbationKind::StaticDelta && pert.delta.size() != nu) {
    throw DimensionError("rollout: static delta needs one entry per input");
  }
  if (!(options.exploration_noise >= 0.0)) throw DomainError("rollout: exploration noise must be nonnegative");

  const int steps = cfg.steps();
  std::optional<DeltaWaveform> waveform;
  if (pert.kind == PerturbationKind::TimeVaryingDelta) {
    waveform.emplace(nu, pert.bound, cfg.horizon, cfg.dt, pert.waveform_seed);
  }
  std::mt19937_64 noise_rng(options.noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto traj = std::make_shared<Trajectory>();
  traj->times.reserve(steps);
  traj->plant_states.reserve(steps);
  traj->controller_states.reserve(steps);
  traj->u_raw.reserve(steps);
  traj->u_sat.reserve(steps);
  traj->rewards.reserve(steps);

  Eigen::VectorXd z(np + nk);
  z.head(np) = x0;
  z.tail(nk).setZero();
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(theta.dims.nphi);

  const VectorField field = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& u) {
    Eigen::VectorXd dz(np + nk);
    const Eigen::VectorXd xp = s.head(np);
    dz.head(np) = plant.A * xp + plant.B * u;
    if (nk > 0) {
      const ControllerOutput c = forward(theta, s.tail(nk), plant.C * xp, warm, options.implicit);
      dz.tail(nk) = c.x_k_dot;
    }
    return dz;
  };

  const auto fail = [&](int step, const std::string& why) {
    traj->final_plant_state = z.head(np);
    traj->final_controller_state = z.tail(nk);
    throw DivergenceError("rollout diverged at step " + std::to_string(step) + ": " + why, step, traj);
  };

  for (int k = 0; k < steps; ++k) {
    const double t = k * cfg.dt;
    const Eigen::VectorXd xp = z.head(np);
    const ControllerOutput c = forward(theta, z.tail(nk), plant.C * xp, warm, options.implicit);
    warm = c.w_k;
    Eigen::VectorXd u_tilde = c.u_tilde;
    if (options.exploration_noise > 0.0) {
      for (Eigen::Index i = 0; i < u_tilde.size(); ++i) u_tilde(i) += options.exploration_noise * normal(noise_rng);
    }
    const Eigen::VectorXd u_raw = perturb(pert, u_tilde, t, waveform);
    const Eigen::VectorXd u_sat = u_raw.cwiseMax(-cfg.input_saturation).cwiseMin(cfg.input_saturation);
    const double r = reward(xp, u_sat);

    traj->times.push_back(t);
    traj->plant_states.push_back(xp);
    traj->controller_states.push_back(z.tail(nk));
    traj->u_raw.push_back(u_raw);
    traj->u_sat.push_back(u_sat);
    traj->rewards.push_back(r);
    traj->total_reward += r;

    // The first stage reuses the controller evaluation above.
    Eigen::VectorXd k1(np + nk);
    k1.head(np) = plant.A * xp + plant.B * u_sat;
    k1.tail(nk) = c.x_k_dot;
    try {
      z = rk4_step(field, z, u_sat, cfg.dt, k1, k);
    } catch (const DivergenceError&) {
      fail(k, "non-finite state");
    }
    if (z.norm() > kDivergenceNorm) fail(k, "state norm exceeded 1e9");
  }
  traj->final_plant_state = z.head(np);
  traj->final_controller_state = z.tail(nk);
  return std::move(*traj);
}

Trajectory rollout(const PlantModel& plant, const RinnParams& theta, const SimConfig& cfg,
                   const PerturbationSpec& pert, const RolloutOptions& options) {
  return rollout(plant, theta, cfg, pert, sample_initial_state(cfg, plant.n_p(), cfg.seed), options);
}

ProbeReport stability_probe(const PlantModel& plant, const RinnParams& theta, const DiskMargin& margin,
                            int n_samples, double probe_horizon, const ProbeOptions& options) {
  margin.validate();
  if (n_samples < 0) throw DomainError("stability_probe: n_samples must be nonnegative");
  SimConfig cfg;
  cfg.dt = options.dt;
  cfg.horizon = probe_horizon;
  cfg.input_saturation = std::numeric_limits<double>::infinity();
  cfg.validate();

  Eigen::VectorXd x0(plant.n_p());
  if (options.x0) {
    x0 = *options.x0;
  } else {
    const auto ranges = default_init_ranges(plant.n_p());
    for (int i = 0; i < plant.n_p(); ++i) x0(i) = ranges[i].hi;
  }

  std::vector<PerturbationSpec> perts;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!options.gains.empty()) {
    for (double g : options.gains) perts.push_back(PerturbationSpec::constant_gain(g));
  } else if (margin.alpha == 0.0) {
    perts.push_back(PerturbationSpec::constant_gain(1.0));
  } else {
    const GainBounds gb = gain_bounds(margin);
    const double lo = std::log(gb.gamma_min);
    const double hi = std::log(gb.gamma_max ? *gb.gamma_max : 10.0 / std::max(gb.gamma_min, 1e-3));
    for (int i = 0; i < n_samples; ++i) {
      perts.push_back(PerturbationSpec::constant_gain(std::exp(lo + (0.02 + 0.96 * unit(rng)) * (hi - lo))));
    }
  }
  if (margin.alpha > 0.0 && options.gains.empty()) {
    for (int i = 0; i < n_samples; ++i) perts.push_back(PerturbationSpec::time_varying(margin.alpha, rng(), margin.sigma));
  }

  ProbeReport report;
  const double n0 = x0.norm();
  for (const auto& p : perts) {
    ProbeSample s{p, std::numeric_limits<double>::infinity()};
    try {
      const Trajectory tr = rollout(plant, theta, cfg, p, x0);
      const double nT = std::hypot(tr.final_plant_state.norm(), tr.final_controller_state.norm());
      s.decay_ratio = n0 > 0.0 ? nT / n0 : nT;
    } catch (const DivergenceError&) {
    } catch (const WellPosednessError&) {
    } catch (const DomainError&) {
    }
    report.worst_ratio = std::max(report.worst_ratio, s.decay_ratio);
    report.samples.push_back(std::move(s));
  }
  return report;
}

}  // namespace marginnet
