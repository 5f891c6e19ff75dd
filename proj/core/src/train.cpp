#include "marginnet/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace marginnet {

std::string save_rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng load_rng_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw DomainError("invalid RNG state");
  return rng;
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Constrained:
      return "constrained";
    case TrainMode::UnconstrainedBaseline:
      return "unconstrained-baseline";
    case TrainMode::LtiBaseline:
      return "lti-baseline";
  }
  return "unknown";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "constrained") return TrainMode::Constrained;
  if (name == "unconstrained-baseline") return TrainMode::UnconstrainedBaseline;
  if (name == "lti-baseline") return TrainMode::LtiBaseline;
  throw DomainError("unknown training mode '" + name +
                    "' (expected constrained, unconstrained-baseline or lti-baseline)");
}

ControllerDims TrainConfig::controller_dims() const {
  return {nk, mode == TrainMode::LtiBaseline ? 0 : nphi, plant_sim.n_u(), plant_sim.n_y()};
}

void TrainConfig::validate() const {
  plant_design.validate();
  plant_sim.validate();
  margin.validate();
  sim.validate();
  if (plant_design.n_u() != plant_sim.n_u() || plant_design.n_y() != plant_sim.n_y()) {
    throw DimensionError("train: design and simulation plants must share input and output sizes");
  }
  if (nk < 0 || nphi < 0) throw DimensionError("train: n_k and n_phi must be nonnegative");
  if (mode != TrainMode::UnconstrainedBaseline && nk != plant_design.n_p()) {
    throw DimensionError("train: constrained and lti-baseline modes need n_k = n_p of the design plant (" +
                         std::to_string(plant_design.n_p()) + ")");
  }
  if (rl.population < 2 || rl.population % 2 != 0) throw DomainError("train: population must be even and >= 2");
  if (!(rl.es_sigma > 0.0)) throw DomainError("train: es_sigma must be positive");
  if (!(rl.learning_rate >= 0.0)) throw DomainError("train: learning_rate must be nonnegative");
  if (rl.episodes_per_eval < 1 || rl.eval_episodes < 1) throw DomainError("train: episode counts must be >= 1");
  if (!(rl.max_step_norm > 0.0)) throw DomainError("train: max_step_norm must be positive");
  if (!(rl.noise_start >= 0.0) || !(rl.noise_end >= 0.0)) throw DomainError("train: noise std must be >= 0");
  if (iterations < 0) throw DomainError("train: iterations must be nonnegative");
  if (checkpoint_every < 1) throw DomainError("train: checkpoint_every must be >= 1");
  if (threads < 0) throw DomainError("train: threads must be >= 0");
}

std::string to_csv(const MetricsRow& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << r.iteration << ',' << r.env_steps << ',' << r.mean_eval_reward << ',' << r.std_eval_reward << ',';
  if (r.cert_feasible_pre_projection) os << *r.cert_feasible_pre_projection;
  os << ',';
  if (r.projection_applied) os << *r.projection_applied;
  os << ',';
  if (r.projection_distance) os << *r.projection_distance;
  os << ',' << r.wall_time_s;
  return os.str();
}

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct EpisodeResult {
  double reward = 0.0;
  std::uint64_t steps = 0;
  bool diverged = false;
};

EpisodeResult run_episode(const PlantModel& plant, const RinnParams& theta, const SimConfig& sim,
                          const Eigen::VectorXd& x0, const RolloutOptions& opts) {
  try {
    const Trajectory tr = rollout(plant, theta, sim, PerturbationSpec::none(), x0, opts);
    return {tr.total_reward, tr.size(), false};
  } catch (const DivergenceError& e) {
    const Trajectory* p = e.partial();
    return {p ? p->total_reward : 0.0, p ? p->size() : 0, true};
  } catch (const WellPosednessError&) {
    return {0.0, 0, true};
  }
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<Eigen::VectorXd> sample_directions(Eigen::Index dim, int population, Rng& rng) {
  if (population < 2 || population % 2 != 0) throw DomainError("es: population must be even and >= 2");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> dirs(static_cast<std::size_t>(population / 2), Eigen::VectorXd(dim));
  for (auto& d : dirs) {
    for (Eigen::Index i = 0; i < dim; ++i) d(i) = normal(rng);
  }
  return dirs;
}

EsStepResult es_update(const Eigen::VectorXd& params, const Objective& objective, const EsParams& es,
                       const std::vector<Eigen::VectorXd>& directions) {
  if (!(es.sigma > 0.0)) throw DomainError("es: sigma must be positive");
  if (static_cast<int>(directions.size()) * 2 != es.population) {
    throw DomainError("es: need population / 2 directions");
  }
  const int pairs = static_cast<int>(directions.size());
  std::vector<Evaluation> plus(pairs), minus(pairs);
  parallel_for(2 * pairs, es.threads, [&](int k) {
    const int i = k / 2;
    if (k % 2 == 0) {
      plus[i] = objective(params + es.sigma * directions[i]);
    } else {
      minus[i] = objective(params - es.sigma * directions[i]);
    }
  });

  EsStepResult out;
  out.evaluations = 2 * pairs;
  out.gradient = Eigen::VectorXd::Zero(params.size());
  for (int i = 0; i < pairs; ++i) {
    out.diverged += plus[i].diverged + minus[i].diverged;
    out.gradient += (plus[i].reward - minus[i].reward) * directions[i];
  }
  out.gradient /= es.population * es.sigma;
  if (out.diverged == out.evaluations) {
    out.aborted = true;
    out.params = params;
    return out;
  }
  Eigen::VectorXd step = es.learning_rate * out.gradient;
  const double norm = step.norm();
  if (norm > es.max_step_norm) {
    step *= es.max_step_norm / norm;
    out.clipped = true;
  }
  out.params = params + step;
  return out;
}

EsStepResult es_update(const Eigen::VectorXd& params, const Objective& objective, const EsParams& es, Rng& rng) {
  return es_update(params, objective, es, sample_directions(params.size(), es.population, rng));
}

RinnParams es_rl_step(const RinnParams& theta, RlContext& ctx) {
  const TrainConfig& cfg = ctx.cfg;
  const int episodes = cfg.rl.episodes_per_eval;
  const std::uint64_t base = ctx.rng();
  std::vector<Eigen::VectorXd> x0(episodes);
  std::vector<std::uint64_t> noise_seed(episodes);
  for (int j = 0; j < episodes; ++j) {
    x0[j] = sample_initial_state(cfg.sim, cfg.plant_sim.n_p(), mix(base + 2 * j));
    noise_seed[j] = mix(base + 2 * j + 1);
  }
  std::atomic<std::uint64_t> steps{0};
  const Objective objective = [&](const Eigen::VectorXd& p) {
    const RinnParams t = unflatten(p, theta.dims, theta.activation);
    Evaluation ev;
    for (int j = 0; j < episodes; ++j) {
      RolloutOptions ro;
      ro.exploration_noise = ctx.exploration_noise;
      ro.noise_seed = noise_seed[j];
      const EpisodeResult r = run_episode(cfg.plant_sim, t, cfg.sim, x0[j], ro);
      ev.reward += r.reward;
      ev.diverged = ev.diverged || r.diverged;
      steps += r.steps;
    }
    ev.reward /= episodes;
    return ev;
  };
  EsParams es{cfg.rl.population, cfg.rl.es_sigma, cfg.rl.learning_rate, resolve_threads(cfg.threads),
              cfg.rl.max_step_norm};
  const EsStepResult res = es_update(flatten(theta), objective, es, ctx.rng);
  ctx.env_steps_taken += steps.load();
  ctx.aborted = res.aborted;
  return unflatten(res.params, theta.dims, theta.activation);
}

std::pair<double, double> evaluate_controller(const PlantModel& plant, const RinnParams& theta, const SimConfig& sim,
                                              int episodes, std::uint64_t seed, int threads,
                                              std::uint64_t* env_steps) {
  if (episodes < 1) throw DomainError("evaluate_controller: episodes must be >= 1");
  std::vector<EpisodeResult> res(episodes);
  parallel_for(episodes, threads, [&](int j) {
    res[j] = run_episode(plant, theta, sim, sample_initial_state(sim, plant.n_p(), mix(seed + j)), {});
  });
  double mean = 0.0;
  for (const auto& r : res) mean += r.reward;
  mean /= episodes;
  double var = 0.0;
  for (const auto& r : res) var += (r.reward - mean) * (r.reward - mean);
  if (env_steps) {
    for (const auto& r : res) *env_steps += r.steps;
  }
  return {mean, std::sqrt(var / episodes)};
}

namespace {

RinnParams gaussian_theta(const ControllerDims& d, Activation activation, Rng& rng) {
  RinnParams t = RinnParams::zeros(d, activation);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto fill = [&](Eigen::MatrixXd& m) {
    if (m.cols() == 0) return;
    const double s = 0.1 / std::sqrt(static_cast<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = s * normal(rng);
    }
  };
  fill(t.A_k);
  fill(t.B_kw);
  fill(t.B_ky);
  fill(t.C_kv);
  fill(t.D_kvw);
  fill(t.D_kvy);
  fill(t.C_ku);
  fill(t.D_kuw);
  fill(t.D_kuy);
  return t;
}

// construct_theta_hat needs Lambda_k > 0; certify only guarantees >= 0.
Eigen::VectorXd floored(const Eigen::VectorXd& lambda_k) { return lambda_k.cwiseMax(sdp::kEpsPd); }

}  // namespace

Initialization initialize(const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  Initialization init;
  const ControllerDims d = cfg.controller_dims();
  init.theta = gaussian_theta(d, cfg.activation, rng);
  init.X = Eigen::MatrixXd::Identity(cfg.plant_design.n_p() + d.nk, cfg.plant_design.n_p() + d.nk);
  init.lambda_p = Eigen::VectorXd::Ones(d.nu);
  init.lambda_k = Eigen::VectorXd::Ones(d.nphi);
  if (!cfg.enforces_margin()) return init;

  const CertifyResult raw = certify(cfg.plant_design, init.theta, cfg.margin);
  if (raw) {
    init.raw_certified = true;
  } else {
    EnforceResult er;
    try {
      er = enforce_margin(init.theta, init.X, init.lambda_p, init.lambda_k, cfg.margin, cfg.plant_design);
    } catch (const MarginInfeasibleError& e) {
      throw MarginInfeasibleError(std::string("initialization: ") + e.what() + "; try a smaller alpha");
    }
    init.projection_distance = er.theta_distance;
    init.theta = er.theta;
  }
  const CertifyResult cr = raw ? raw : certify(cfg.plant_design, init.theta, cfg.margin);
  if (!cr) {
    throw MarginInfeasibleError("initialization: the projected controller does not certify (" + cr.detail +
                                "); try a smaller alpha");
  }
  init.certificate = cr.certificate;
  init.X = cr.certificate->X;
  init.lambda_p = cr.certificate->multipliers.lambda_p;
  init.lambda_k = cr.certificate->multipliers.lambda_k;
  return init;
}

TrainResult train(const TrainConfig& cfg, const TrainCallbacks& callbacks, const RlStep& rl_step,
                  const std::optional<Checkpoint>& resume) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count(); };
  const int threads = resolve_threads(cfg.threads);
  const std::uint64_t eval_seed = mix(cfg.seed ^ 0x5eedULL);
  const bool enforce = cfg.enforces_margin();

  TrainResult result;
  Checkpoint& state = result.final;
  Rng rng(cfg.seed);

  const auto emit = [&](MetricsRow row) {
    const auto [mean, sd] = evaluate_controller(cfg.plant_sim, state.theta, cfg.sim, cfg.rl.eval_episodes,
                                                eval_seed, threads);
    row.mean_eval_reward = mean;
    row.std_eval_reward = sd;
    row.wall_time_s = elapsed();
    result.metrics.push_back(row);
    if (callbacks.on_metrics) callbacks.on_metrics(row);
  };

  if (resume) {
    state = *resume;
    rng = load_rng_state(resume->rng_state);
    if (enforce && !state.certificate) throw DomainError("train: resuming a constrained run needs a certificate");
  } else {
    const Initialization init = initialize(cfg, rng);
    state.iteration = 0;
    state.theta = init.theta;
    state.certificate = init.certificate;
    state.env_steps = 0;
    MetricsRow row;
    row.iteration = 0;
    if (enforce) {
      row.cert_feasible_pre_projection = init.raw_certified ? 1 : 0;
      row.projection_applied = init.raw_certified ? 0 : 1;
      row.projection_distance = init.projection_distance;
    }
    state.rng_state = save_rng_state(rng);
    emit(row);
  }

  int consecutive_failures = 0;
  const auto halt = [&](const std::string& why) {
    state.rng_state = save_rng_state(rng);
    throw TrainingHaltedError("training halted at iteration " + std::to_string(state.iteration + 1) + ": " + why,
                              state);
  };

  for (int it = state.iteration + 1; it <= cfg.iterations; ++it) {
    const double frac = cfg.iterations > 1 ? static_cast<double>(it - 1) / (cfg.iterations - 1) : 0.0;
    RlContext ctx{cfg, rng, it, cfg.rl.noise_start + (cfg.rl.noise_end - cfg.rl.noise_start) * frac};
    const RinnParams theta_prime = rl_step(state.theta, ctx);
    state.env_steps += ctx.env_steps_taken;

    MetricsRow row;
    row.iteration = it;
    row.rl_step_aborted = ctx.aborted;

    if (!enforce) {
      state.theta = theta_prime;
    } else {
      const CertifyResult pre = certify(cfg.plant_design, theta_prime, cfg.margin);
      if (pre) {
        consecutive_failures = 0;
        state.theta = theta_prime;
        state.certificate = pre.certificate;
        row.cert_feasible_pre_projection = 1;
        row.projection_applied = 0;
        row.projection_distance = 0.0;
      } else {
        if (pre.status == CertifyStatus::NumericalFailure) ++consecutive_failures;
        row.cert_feasible_pre_projection = 0;
        row.projection_applied = 1;
        const Certificate& last = *state.certificate;
        const Eigen::VectorXd lambda_k = floored(last.multipliers.lambda_k);
        std::vector<RinnParams> candidates;
        try {
          const EnforceResult er = enforce_margin(theta_prime, last.X, last.multipliers.lambda_p, lambda_k,
                                                  cfg.margin, cfg.plant_design);
          candidates.push_back(er.theta);
        } catch (const MarginInfeasibleError& e) {
          halt(std::string(e.what()) + "; the margin is unattainable at the current Lambda_p");
        } catch (const NumericalFailureError&) {
          ++consecutive_failures;
        } catch (const ReconstructionError&) {
          ++consecutive_failures;
        } catch (const DegenerateCertificateError&) {
          ++consecutive_failures;
        }
        // The incumbent satisfies the LMI at the last certificate, so the
        // theta-space set there is nonempty and lies within one step of theta'.
        const double attained = attained_theta_margin(state.theta, theta_prime, last.X, last.multipliers.lambda_p,
                                                      lambda_k, cfg.margin, cfg.plant_design);
        if (attained > 0.0) {
          ProjectionOptions po;
          po.theta_margin = std::min(po.theta_margin, 0.5 * attained);
          try {
            candidates.push_back(project_theta(theta_prime, last.X, last.multipliers.lambda_p, lambda_k, cfg.margin,
                                               cfg.plant_design, po));
          } catch (const InternalConsistencyError&) {
          } catch (const NumericalFailureError&) {
          }
        }
        std::sort(candidates.begin(), candidates.end(), [&](const RinnParams& a, const RinnParams& b) {
          return (flatten(a) - flatten(theta_prime)).norm() < (flatten(b) - flatten(theta_prime)).norm();
        });
        bool adopted = false;
        bool solver_failed = false;
        for (const RinnParams& candidate : candidates) {
          const CertifyResult post = certify(cfg.plant_design, candidate, cfg.margin);
          if (post) {
            state.theta = candidate;
            state.certificate = post.certificate;
            adopted = true;
            break;
          }
          solver_failed = solver_failed || post.status == CertifyStatus::NumericalFailure;
        }
        if (adopted) {
          consecutive_failures = 0;
        } else if (solver_failed) {
          ++consecutive_failures;
        }
        // A projected controller that does not re-certify is not adopted;
        // the previous certified controller is kept.
        row.projection_rejected = !adopted;
        row.projection_distance = (flatten(state.theta) - flatten(theta_prime)).norm();
        if (consecutive_failures >= 3) halt("three consecutive solver failures");
      }
    }
    state.iteration = it;
    row.env_steps = state.env_steps;
    state.rng_state = save_rng_state(rng);
    emit(row);
    if (callbacks.on_checkpoint && it % cfg.checkpoint_every == 0) callbacks.on_checkpoint(state);
  }
  state.rng_state = save_rng_state(rng);
  return result;
}

}  // namespace marginnet
