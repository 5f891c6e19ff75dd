#include <benchmark/benchmark.h>

#include "marginnet/certify.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sim.hpp"
#include "marginnet/synthesis.hpp"
#include "marginnet/train.hpp"

using namespace marginnet;

namespace {

const DiskMargin kMargin{0.353, 0.0};

TrainConfig rigid_config(int nphi) {
  TrainConfig c;
  c.plant_design = rigid_rod_plant();
  c.plant_sim = flexible_rod_plant();
  c.nphi = nphi;
  return c;
}

Initialization certified_start(int nphi) {
  Rng rng(0);
  return initialize(rigid_config(nphi), rng);
}

void BM_MarginBounds(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(margin_bounds(kMargin));
}
BENCHMARK(BM_MarginBounds);

void BM_Certify(benchmark::State& state) {
  const Initialization init = certified_start(static_cast<int>(state.range(0)));
  const PlantModel plant = rigid_rod_plant();
  for (auto _ : state) benchmark::DoNotOptimize(certify(plant, init.theta, kMargin));
}
BENCHMARK(BM_Certify)->Arg(0)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  const Initialization init = certified_start(static_cast<int>(state.range(0)));
  const PlantModel plant = flexible_rod_plant();
  const SimConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(rollout(plant, init.theta, cfg).total_reward);
}
BENCHMARK(BM_Rollout)->Arg(0)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_EnforceMargin(benchmark::State& state) {
  const Initialization init = certified_start(16);
  const PlantModel plant = rigid_rod_plant();
  Eigen::VectorXd p = flatten(init.theta);
  p += 0.05 * Eigen::VectorXd::Ones(p.size());
  const RinnParams shifted = unflatten(p, init.theta.dims, init.theta.activation);
  const Certificate& c = *init.certificate;
  const Eigen::VectorXd lk = c.multipliers.lambda_k.cwiseMax(sdp::kEpsPd);
  for (auto _ : state) {
    benchmark::DoNotOptimize(enforce_margin(shifted, c.X, c.multipliers.lambda_p, lk, kMargin, plant));
  }
}
BENCHMARK(BM_EnforceMargin)->Unit(benchmark::kMillisecond);

void BM_EsStep(benchmark::State& state) {
  TrainConfig cfg = rigid_config(16);
  cfg.rl.population = 8;
  cfg.rl.episodes_per_eval = 1;
  cfg.threads = 1;
  const Initialization init = certified_start(16);
  Rng rng(1);
  for (auto _ : state) {
    RlContext ctx{cfg, rng, 1, cfg.rl.noise_start};
    benchmark::DoNotOptimize(es_rl_step(init.theta, ctx));
  }
}
BENCHMARK(BM_EsStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
