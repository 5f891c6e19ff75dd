#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "marginnet/certify.hpp"
#include "marginnet/io.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sim.hpp"
#include "marginnet/synthesis.hpp"
#include "marginnet/train.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using namespace marginnet;

namespace {

// Exit codes shared by every subcommand.
constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kNotCertified = 2;
constexpr int kNumericalFailure = 3;
constexpr int kHalted = 4;

void print_bounds(const DiskMargin& m) {
  const MarginBounds b = margin_bounds(m);
  std::printf("gamma_min %.6f (%.4f dB)\n", b.gamma_min, to_db(b.gamma_min));
  if (b.gamma_max) {
    std::printf("gamma_max %.6f (%.4f dB)\n", *b.gamma_max, to_db(*b.gamma_max));
  } else {
    std::printf("gamma_max inf (inf dB)\n");
  }
  std::printf("phase_deg %.4f\n", b.phase_deg);
}

int exit_code(CertifyStatus s) {
  switch (s) {
    case CertifyStatus::Certified: return kOk;
    case CertifyStatus::NotCertified: return kNotCertified;
    case CertifyStatus::NumericalFailure: return kNumericalFailure;
  }
  return kError;
}

struct CertifyArgs {
  std::string plant, controller, out;
  double alpha = 0.0, sigma = 0.0;
};

int run_certify(const CertifyArgs& a) {
  const PlantModel plant = io::load_plant(a.plant);
  const RinnParams theta = io::controller_from_json(io::read_json_file(a.controller));
  const CertifyResult r = certify(plant, theta, {a.alpha, a.sigma});
  std::printf("status %s\n", to_string(r.status));
  if (!r.detail.empty()) std::printf("detail %s\n", r.detail.c_str());
  if (r.certificate) {
    std::printf("residual %.3e\n", r.certificate->residual);
    if (!a.out.empty()) io::write_json_file(a.out, io::certificate_to_json(*r.certificate));
  }
  return exit_code(r.status);
}

struct MaxAlphaArgs {
  std::string plant, controller, out;
  double sigma = 0.0, tol = 1e-3;
};

int run_max_alpha(const MaxAlphaArgs& a) {
  const PlantModel plant = io::load_plant(a.plant);
  const RinnParams theta = io::controller_from_json(io::read_json_file(a.controller));
  MaxAlphaResult r;
  try {
    r = max_alpha(plant, theta, a.sigma, a.tol);
  } catch (const NoNominalStabilityError& e) {
    std::printf("alpha_star none\n");
    std::fprintf(stderr, "%s\n", e.what());
    return kNotCertified;
  }
  std::printf("alpha_star %.6f%s\n", r.alpha_star, r.capped ? " (capped)" : "");
  print_bounds({r.alpha_star, a.sigma});
  if (!a.out.empty() && r.certificate) io::write_json_file(a.out, io::certificate_to_json(*r.certificate));
  return kOk;
}

struct ProjectArgs {
  std::string plant, controller, cert, out;
  double alpha = 0.0, sigma = 0.0;
};

int run_project(const ProjectArgs& a) {
  const PlantModel plant = io::load_plant(a.plant);
  const RinnParams theta = io::controller_from_json(io::read_json_file(a.controller));
  const Certificate last = io::certificate_from_json(io::read_json_file(a.cert));
  const DiskMargin margin{a.alpha, a.sigma};
  const EnforceResult e = enforce_margin(theta, last.X, last.multipliers.lambda_p,
                                         last.multipliers.lambda_k.cwiseMax(sdp::kEpsPd), margin, plant);
  std::printf("theta_hat_distance %.6e\n", e.theta_hat_distance);
  std::printf("theta_distance %.6e\n", e.theta_distance);
  if (e.regularized) std::printf("regularized 1\n");
  if (e.used_reconstruction) std::printf("used_reconstruction 1\n");
  const CertifyResult r = certify(plant, e.theta, margin);
  std::printf("status %s\n", to_string(r.status));
  io::json out = io::controller_to_json(e.theta);
  out["certificate"] = r.certificate ? io::certificate_to_json(*r.certificate) : io::json(nullptr);
  io::write_json_file(a.out, out);
  return exit_code(r.status);
}

struct EvalArgs {
  std::string plant_sim, controller, traj_out;
  std::optional<double> gamma, delta_bound;
  double sigma = 0.0, horizon = 2.0;
  int episodes = 1;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  const PlantModel plant = io::load_plant(a.plant_sim);
  const RinnParams theta = io::controller_from_json(io::read_json_file(a.controller));
  SimConfig cfg;
  cfg.horizon = a.horizon;
  cfg.validate();
  if (!a.traj_out.empty()) fs::create_directories(a.traj_out);

  std::vector<double> totals;
  for (int j = 0; j < a.episodes; ++j) {
    const std::uint64_t s = a.seed + static_cast<std::uint64_t>(j);
    PerturbationSpec pert;
    if (a.gamma) pert = PerturbationSpec::constant_gain(*a.gamma);
    if (a.delta_bound) pert = PerturbationSpec::time_varying(*a.delta_bound, s, a.sigma);
    const Eigen::VectorXd x0 = sample_initial_state(cfg, plant.n_p(), s);
    Trajectory traj;
    std::string note;
    try {
      traj = rollout(plant, theta, cfg, pert, x0);
    } catch (const DivergenceError& e) {
      if (e.partial()) traj = *e.partial();
      note = " diverged at step " + std::to_string(e.step());
    }
    totals.push_back(traj.total_reward);
    std::printf("episode %d reward %.6f%s\n", j, traj.total_reward, note.c_str());
    if (!a.traj_out.empty()) {
      std::ofstream f(fs::path(a.traj_out) / ("episode_" + std::to_string(j) + ".csv"));
      traj.write_csv(f);
    }
  }
  double mean = 0.0, var = 0.0;
  for (double t : totals) mean += t;
  mean /= totals.size();
  for (double t : totals) var += (t - mean) * (t - mean);
  var /= totals.size();
  std::printf("mean_reward %.6f\nstd_reward %.6f\n", mean, std::sqrt(var));
  return kOk;
}

struct TrainArgs {
  std::string config, out;
  bool plot = false;
  std::optional<int> iterations, threads;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

void write_plot(const fs::path& dir, const std::vector<MetricsRow>& rows) {
  tools::Series s;
  for (const auto& r : rows) {
    s.x.push_back(static_cast<double>(r.env_steps));
    s.y.push_back(r.mean_eval_reward);
  }
  std::ofstream f(dir / "reward_curve.svg");
  tools::write_line_plot(f, s, "Evaluation reward", "environment steps", "mean eval reward");
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = io::train_config_from_json(io::read_json_file(a.config));
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.threads) cfg.threads = *a.threads;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::write_json_file(dir / "config.json", io::train_config_to_json(cfg));

  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = io::checkpoint_from_json(io::read_json_file(a.resume));

  std::ofstream metrics(dir / "metrics.csv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) metrics << kMetricsHeader << "\n";
  std::vector<MetricsRow> rows;
  TrainCallbacks cb;
  cb.on_metrics = [&](const MetricsRow& r) {
    metrics << to_csv(r) << "\n" << std::flush;
    rows.push_back(r);
    std::printf("iter %d env_steps %llu reward %.3f +- %.3f%s\n", r.iteration,
                static_cast<unsigned long long>(r.env_steps), r.mean_eval_reward, r.std_eval_reward,
                r.projection_rejected ? " (projection rejected)" : r.rl_step_aborted ? " (rl step aborted)" : "");
    std::fflush(stdout);
  };
  cb.on_checkpoint = [&](const Checkpoint& ck) {
    io::write_json_file(dir / ("checkpoint_" + std::to_string(ck.iteration) + ".json"), io::checkpoint_to_json(ck));
  };

  int code = kOk;
  try {
    const TrainResult res = train(cfg, cb, es_rl_step, resume);
    io::write_json_file(dir / "final.json", io::checkpoint_to_json(res.final));
  } catch (const TrainingHaltedError& e) {
    std::fprintf(stderr, "training halted: %s\n", e.what());
    io::write_json_file(dir / "final.json", io::checkpoint_to_json(e.last_checkpoint()));
    code = kHalted;
  }
  if (a.plot && !rows.empty()) write_plot(dir, rows);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disk-margin certification and margin-constrained controller training"};
  app.require_subcommand(1);

  CertifyArgs ca;
  auto* c = app.add_subcommand("certify", "Certify a disk margin for a controller");
  c->add_option("--plant", ca.plant, "Plant JSON file or rigid-rod | flexible-rod")->required();
  c->add_option("--controller", ca.controller, "Controller JSON file")->required();
  c->add_option("--alpha", ca.alpha, "Disk size")->required()->check(CLI::NonNegativeNumber);
  c->add_option("--sigma", ca.sigma, "Disk skew")->default_val(0.0);
  c->add_option("--out", ca.out, "Certificate JSON output");

  MaxAlphaArgs ma;
  auto* m = app.add_subcommand("max-alpha", "Largest certified disk size by bisection");
  m->add_option("--plant", ma.plant, "Plant JSON file or rigid-rod | flexible-rod")->required();
  m->add_option("--controller", ma.controller, "Controller JSON file")->required();
  m->add_option("--sigma", ma.sigma, "Disk skew")->default_val(0.0);
  m->add_option("--tol", ma.tol, "Bisection tolerance")->default_val(1e-3)->check(CLI::PositiveNumber);
  m->add_option("--out", ma.out, "Certificate at alpha* JSON output");

  ProjectArgs pa;
  auto* p = app.add_subcommand("project", "Project a controller onto the certified set");
  p->add_option("--plant", pa.plant, "Plant JSON file or rigid-rod | flexible-rod")->required();
  p->add_option("--controller", pa.controller, "Controller JSON file")->required();
  p->add_option("--alpha", pa.alpha, "Disk size")->required()->check(CLI::NonNegativeNumber);
  p->add_option("--sigma", pa.sigma, "Disk skew")->default_val(0.0);
  p->add_option("--cert", pa.cert, "Last certificate JSON")->required();
  p->add_option("--out", pa.out, "Projected controller JSON output")->required();

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Roll out a controller and report episode rewards");
  e->add_option("--plant-sim", ea.plant_sim, "flexible | rigid or a plant JSON file")->required();
  e->add_option("--controller", ea.controller, "Controller JSON file")->required();
  auto* g = e->add_option("--gamma", ea.gamma, "Constant input gain");
  auto* d = e->add_option("--delta-bound", ea.delta_bound, "Bound on a time-varying delta");
  g->excludes(d);
  e->add_option("--sigma", ea.sigma, "Skew used with --delta-bound")->default_val(0.0);
  e->add_option("--episodes", ea.episodes, "Number of episodes")->default_val(1)->check(CLI::PositiveNumber);
  e->add_option("--seed", ea.seed, "Initial-state seed")->default_val(0);
  e->add_option("--horizon", ea.horizon, "Episode length in seconds")->default_val(2.0);
  e->add_option("--traj-out", ea.traj_out, "Directory for episode_<j>.csv trajectories");

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "Margin-constrained training");
  t->add_option("--config", ta.config, "Training config JSON")->required();
  t->add_option("--out", ta.out, "Output directory")->required();
  t->add_flag("--plot", ta.plot, "Write reward_curve.svg");
  t->add_option("--iterations", ta.iterations, "Override iterations");
  t->add_option("--threads", ta.threads, "Override worker threads (0 = all cores)");
  t->add_option("--seed", ta.seed, "Override seed");
  t->add_option("--resume", ta.resume, "Checkpoint JSON to continue from");

  double m_alpha = 0.0, m_sigma = 0.0;
  auto* mg = app.add_subcommand("margins", "Gain and phase bounds of a disk margin");
  mg->add_option("--alpha", m_alpha, "Disk size")->required()->check(CLI::NonNegativeNumber);
  mg->add_option("--sigma", m_sigma, "Disk skew")->default_val(0.0);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c) return run_certify(ca);
    if (*m) return run_max_alpha(ma);
    if (*p) return run_project(pa);
    if (*e) return run_eval(ea);
    if (*t) return run_train(ta);
    if (*mg) {
      const DiskMargin dm{m_alpha, m_sigma};
      dm.validate();
      print_bounds(dm);
      return kOk;
    }
  } catch (const NumericalFailureError& ex) {
    std::fprintf(stderr, "numerical failure: %s\n", ex.what());
    return kNumericalFailure;
  } catch (const MarginInfeasibleError& ex) {
    std::fprintf(stderr, "infeasible: %s\n", ex.what());
    return kNotCertified;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return kError;
  }
  return kError;
}
