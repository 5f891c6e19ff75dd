#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marginnet/certify.hpp"
#include "marginnet/controller.hpp"
#include "marginnet/errors.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sim.hpp"
#include "marginnet/synthesis.hpp"

namespace marginnet {

using Rng = std::mt19937_64;

std::string save_rng_state(const Rng& rng);
Rng load_rng_state(const std::string& state);

enum class TrainMode { Constrained, UnconstrainedBaseline, LtiBaseline };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct EsConfig {
  int population = 32;  // even; population / 2 antithetic pairs
  double es_sigma = 0.02;
  double learning_rate = 5e-5;
  int episodes_per_eval = 4;
  // Exploration noise std on u_tilde, annealed linearly over the run.
  double noise_start = 0.5;
  double noise_end = 0.05;
  // Noise-free evaluation episodes per metrics row.
  int eval_episodes = 4;
  // Updates longer than this are shortened to it; infinity disables.
  double max_step_norm = 0.1;
};

struct TrainConfig {
  PlantModel plant_design;
  PlantModel plant_sim;
  DiskMargin margin{0.353, 0.0};
  int nk = 2;
  int nphi = 16;
  Activation activation = Activation::Tanh;
  SimConfig sim;
  EsConfig rl;
  int iterations = 20;
  TrainMode mode = TrainMode::Constrained;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  int threads = 0;  // 0 = hardware concurrency
  // Off skips certification and projection in every mode.
  bool enforce = true;

  /// Controller dims after mode rules (lti-baseline forces n_phi = 0).
  ControllerDims controller_dims() const;
  bool enforces_margin() const { return enforce && mode != TrainMode::UnconstrainedBaseline; }
  void validate() const;
};

struct Checkpoint {
  int iteration = 0;
  RinnParams theta;
  std::optional<Certificate> certificate;
  std::string rng_state;
  std::uint64_t env_steps = 0;
};

struct MetricsRow {
  int iteration = 0;
  std::uint64_t env_steps = 0;
  double mean_eval_reward = 0.0;
  double std_eval_reward = 0.0;
  std::optional<int> cert_feasible_pre_projection;
  std::optional<int> projection_applied;
  std::optional<double> projection_distance;
  double wall_time_s = 0.0;
  // Not written to metrics.csv.
  bool rl_step_aborted = false;
  bool projection_rejected = false;
};

inline constexpr const char* kMetricsHeader =
    "iteration,env_steps,mean_eval_reward,std_eval_reward,cert_feasible_pre_projection,projection_applied,"
    "projection_distance,wall_time_s";

/// One CSV line without trailing newline; absent optionals are blank.
std::string to_csv(const MetricsRow& row);

// Evolution strategies on a flattened parameter vector.

struct EsParams {
  int population = 32;
  double sigma = 0.02;
  double learning_rate = 5e-5;
  int threads = 1;
  double max_step_norm = std::numeric_limits<double>::infinity();
};

struct Evaluation {
  double reward = 0.0;
  bool diverged = false;
};

using Objective = std::function<Evaluation(const Eigen::VectorXd& params)>;

struct EsStepResult {
  Eigen::VectorXd params;
  Eigen::VectorXd gradient;  // (1/(population sigma)) sum (r+ - r-) eps
  int evaluations = 0;
  int diverged = 0;
  bool aborted = false;  // every evaluation diverged; params unchanged
  bool clipped = false;  // the update was shortened to max_step_norm
};

/// population / 2 standard normal directions drawn from rng.
std::vector<Eigen::VectorXd> sample_directions(Eigen::Index dim, int population, Rng& rng);

/// theta' = theta + lr / (population sigma) sum_i (r(theta + sigma e_i) - r(theta - sigma e_i)) e_i,
/// with the update shortened to max_step_norm when longer.
/// `objective` must be safe to call concurrently.
EsStepResult es_update(const Eigen::VectorXd& params, const Objective& objective, const EsParams& es,
                       const std::vector<Eigen::VectorXd>& directions);
EsStepResult es_update(const Eigen::VectorXd& params, const Objective& objective, const EsParams& es, Rng& rng);

/// Everything one RL step may use; the loop owns it.
struct RlContext {
  const TrainConfig& cfg;
  Rng& rng;
  int iteration;          // 1-based
  double exploration_noise;
  std::uint64_t env_steps_taken = 0;  // filled by the step
  bool aborted = false;               // filled by the step
};

using RlStep = std::function<RinnParams(const RinnParams& theta, RlContext& ctx)>;

/// Antithetic ES on the mean training reward over episodes_per_eval rollouts
/// of plant_sim with common random numbers across the population.
RinnParams es_rl_step(const RinnParams& theta, RlContext& ctx);

/// Mean and std of total reward over noise-free episodes whose initial states
/// come from `seed`; diverged episodes count their partial reward.
std::pair<double, double> evaluate_controller(const PlantModel& plant, const RinnParams& theta, const SimConfig& sim,
                                              int episodes, std::uint64_t seed, int threads = 1,
                                              std::uint64_t* env_steps = nullptr);

struct Initialization {
  RinnParams theta;
  Eigen::MatrixXd X;
  Eigen::VectorXd lambda_p;
  Eigen::VectorXd lambda_k;
  std::optional<Certificate> certificate;  // constrained and lti modes
  bool raw_certified = false;              // the Gaussian draw certified as is
  double projection_distance = 0.0;
};

/// Gaussian theta (std 0.1 / sqrt(fan-in) per matrix), X = Lambda_p =
/// Lambda_k = I; when the margin is enforced the draw is projected once so
/// training starts certified. Throws MarginInfeasibleError with a hint to
/// reduce alpha when that fails.
Initialization initialize(const TrainConfig& cfg, Rng& rng);

class TrainingHaltedError : public Error {
 public:
  TrainingHaltedError(const std::string& what, Checkpoint last) : Error(what), last_(std::move(last)) {}
  const Checkpoint& last_checkpoint() const { return last_; }

 private:
  Checkpoint last_;
};

struct TrainCallbacks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void(const Checkpoint&)> on_checkpoint;  // every checkpoint_every iterations
};

struct TrainResult {
  Checkpoint final;
  std::vector<MetricsRow> metrics;
};

/// The alternating RL / margin-enforcement loop. Emits a metrics row for the
/// initialization (iteration 0) and for each iteration. With `resume` the
/// loop continues from the checkpoint's iteration, theta, certificate and RNG
/// state. Throws TrainingHaltedError on an infeasible projection or after
/// three consecutive solver failures.
TrainResult train(const TrainConfig& cfg, const TrainCallbacks& callbacks = {},
                  const RlStep& rl_step = es_rl_step, const std::optional<Checkpoint>& resume = std::nullopt);

}  // namespace marginnet
