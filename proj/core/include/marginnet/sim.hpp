#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marginnet/controller.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/plant.hpp"

namespace marginnet {

struct InitRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Rod ranges: (x_b, h, x_b', h') for four states, (x_b, x_b') for two,
/// [-1, 1] per state otherwise.
std::vector<InitRange> default_init_ranges(int n_p);

struct SimConfig {
  double dt = 1e-3;
  double horizon = 2.0;
  // Symmetric bound on the applied input; infinity disables saturation.
  double input_saturation = 20.0;
  // Empty means default_init_ranges of the simulated plant.
  std::vector<InitRange> init_ranges;
  std::uint64_t seed = 0;

  void validate() const;
  int steps() const;
};

enum class PerturbationKind { None, ConstantGain, StaticDelta, TimeVaryingDelta };

const char* to_string(PerturbationKind kind);

/// Multiplicative input uncertainty applied between controller and plant.
struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::None;
  double gamma = 1.0;     // ConstantGain
  Eigen::VectorXd delta;  // StaticDelta, one entry per input channel
  double bound = 0.0;     // TimeVaryingDelta: ||delta(t)||_inf = 0.95 bound
  double sigma = 0.0;     // skew of the disk the delta is drawn from
  std::uint64_t waveform_seed = 0;

  static PerturbationSpec none() { return {}; }
  static PerturbationSpec constant_gain(double gamma);
  static PerturbationSpec static_delta(Eigen::VectorXd delta, double sigma = 0.0);
  static PerturbationSpec time_varying(double bound, std::uint64_t waveform_seed, double sigma = 0.0);
};

/// u = u_tilde (1 + delta (1 - s)/2) / (1 - delta (1 + s)/2), the gain seen by
/// the plant when w_p = delta v_p.
double delta_gain(double delta, double sigma);

/// Sum of 8 random sinusoids per channel, rescaled so that the largest
/// sampled magnitude over [0, horizon] is 0.95 bound.
class DeltaWaveform {
 public:
  DeltaWaveform(int channels, double bound, double horizon, double dt, std::uint64_t seed);
  Eigen::VectorXd operator()(double t) const;

 private:
  struct Tone {
    double amplitude, omega, phase;
  };
  std::vector<std::vector<Tone>> tones_;
  Eigen::VectorXd scale_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> plant_states;
  std::vector<Eigen::VectorXd> controller_states;
  std::vector<Eigen::VectorXd> u_raw;
  std::vector<Eigen::VectorXd> u_sat;
  std::vector<double> rewards;
  double total_reward = 0.0;
  Eigen::VectorXd final_plant_state;       // state at times.back() + dt
  Eigen::VectorXd final_controller_state;

  std::size_t size() const { return times.size(); }
  /// One row per step: t, x1..xn, xk1..xknk, u_raw, u_sat, reward (u columns
  /// are numbered when n_u > 1).
  void write_csv(std::ostream& os) const;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int step, std::shared_ptr<const Trajectory> partial = nullptr)
      : Error(what), step_(step), partial_(std::move(partial)) {}
  int step() const { return step_; }
  const Trajectory* partial() const { return partial_.get(); }

 private:
  int step_;
  std::shared_ptr<const Trajectory> partial_;
};

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;

/// Classical four-stage RK4 with u held over the step. Throws DivergenceError
/// carrying `step_index` when the result is not finite.
Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                         int step_index = 0);
/// Same step with the first stage f(x, u) supplied by the caller.
Eigen::VectorXd rk4_step(const VectorField& f, const Eigen::VectorXd& x, const Eigen::VectorXd& u, double dt,
                         const Eigen::VectorXd& k1, int step_index);

/// exp(-||x||^2) + exp(-||u||^2).
double reward(const Eigen::VectorXd& x, const Eigen::VectorXd& u);

Eigen::VectorXd sample_initial_state(const SimConfig& cfg, int n_p, std::uint64_t seed);

struct RolloutOptions {
  // Std of Gaussian noise added to u_tilde each step; 0 disables.
  double exploration_noise = 0.0;
  std::uint64_t noise_seed = 0;
  ImplicitSolveOptions implicit;
};

/// Closed-loop episode from x_p(0) = x0, x_k(0) = 0. Deterministic in its
/// arguments. Throws DivergenceError (state norm > 1e9) with the partial
/// trajectory attached.
Trajectory rollout(const PlantModel& plant, const RinnParams& theta, const SimConfig& cfg,
                   const PerturbationSpec& pert, const Eigen::VectorXd& x0, const RolloutOptions& options = {});

/// As above with x0 drawn from cfg.init_ranges using cfg.seed.
Trajectory rollout(const PlantModel& plant, const RinnParams& theta, const SimConfig& cfg,
                   const PerturbationSpec& pert = {}, const RolloutOptions& options = {});

struct ProbeSample {
  PerturbationSpec perturbation;
  double decay_ratio = 0.0;  // ||x(T)|| / ||x(0)|| over (x_p, x_k); inf on divergence
};

struct ProbeReport {
  std::vector<ProbeSample> samples;
  double worst_ratio = 0.0;
};

struct ProbeOptions {
  double dt = 1e-3;
  std::uint64_t seed = 0;
  // When set, these gains replace the sampled ones.
  std::vector<double> gains;
  std::optional<Eigen::VectorXd> x0;
};

/// Rolls out the unsaturated loop under n_samples constant gains strictly
/// inside (gamma_min, gamma_max) and n_samples time-varying deltas bounded by
/// alpha. When alpha = 0 only gamma = 1 is simulated.
ProbeReport stability_probe(const PlantModel& plant, const RinnParams& theta, const DiskMargin& margin,
                            int n_samples, double probe_horizon, const ProbeOptions& options = {});

}  // namespace marginnet
