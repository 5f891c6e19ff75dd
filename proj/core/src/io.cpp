#include "marginnet/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "marginnet/errors.hpp"

namespace marginnet::io {

namespace {

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw DomainError(where + ": missing field '" + key + "'");
  return j.at(key);
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.is_object() && j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw DomainError(field + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j.at(i);
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw DimensionError(field + ": rows have different lengths");
    }
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row.at(k).get<double>();
  }
  return m;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& field) {
  Eigen::MatrixXd m = matrix_from_json(j, field);
  // Zero-row matrices serialize as [] and lose their column count.
  if (m.rows() == 0 && rows == 0) return Eigen::MatrixXd(0, cols);
  if (m.rows() == rows && m.cols() == 0 && cols == 0) return Eigen::MatrixXd(rows, 0);
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(field + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& field) {
  if (!j.is_array()) throw DomainError(field + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json rod_parameters_to_json(const RodParameters& p) {
  return {{"base_mass", p.base_mass},         {"tip_mass", p.tip_mass},
          {"translating_tip_mass", p.translating_tip_mass},
          {"length", p.length},               {"density", p.density},
          {"radius", p.radius},               {"youngs_modulus", p.youngs_modulus},
          {"damping", p.damping}};
}

RodParameters rod_parameters_from_json(const json& j) {
  RodParameters p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw DomainError("rod parameters: expected an object");
  const bool has_tip = j.contains("tip_mass");
  const bool has_translating = j.contains("translating_tip_mass");
  read_opt(j, "base_mass", p.base_mass);
  read_opt(j, "tip_mass", p.tip_mass);
  read_opt(j, "translating_tip_mass", p.translating_tip_mass);
  read_opt(j, "length", p.length);
  read_opt(j, "density", p.density);
  read_opt(j, "radius", p.radius);
  read_opt(j, "youngs_modulus", p.youngs_modulus);
  read_opt(j, "damping", p.damping);
  if (has_tip && !has_translating) p.translating_tip_mass = p.tip_mass;
  p.validate();
  return p;
}

PlantModel plant_by_name(const std::string& name, const RodParameters& params) {
  if (name == "rigid-rod" || name == "rigid") return rigid_rod_plant(params);
  if (name == "flexible-rod" || name == "flexible") return flexible_rod_plant(params);
  throw DomainError("unknown plant '" + name + "' (expected rigid-rod or flexible-rod)");
}

json plant_to_json(const PlantModel& plant) {
  return {{"A", matrix_to_json(plant.A)}, {"B", matrix_to_json(plant.B)}, {"C", matrix_to_json(plant.C)}};
}

PlantModel plant_from_json(const json& j) {
  if (j.is_string()) return plant_by_name(j.get<std::string>());
  if (!j.is_object()) throw DomainError("plant: expected an object or a model name");
  if (j.contains("model")) {
    return plant_by_name(j.at("model").get<std::string>(),
                         rod_parameters_from_json(j.contains("params") ? j.at("params") : json()));
  }
  Eigen::MatrixXd A = matrix_from_json(require(j, "A", "plant"), "plant.A");
  Eigen::MatrixXd B = matrix_from_json(require(j, "B", "plant"), "plant.B");
  Eigen::MatrixXd C = matrix_from_json(require(j, "C", "plant"), "plant.C");
  return PlantModel::make(std::move(A), std::move(B), std::move(C));
}

PlantModel load_plant(const std::string& file_or_name) {
  if (file_or_name == "rigid-rod" || file_or_name == "flexible-rod" || file_or_name == "rigid" ||
      file_or_name == "flexible") {
    return plant_by_name(file_or_name);
  }
  return plant_from_json(read_json_file(file_or_name));
}

json controller_to_json(const RinnParams& t) {
  t.validate();
  return {{"dims", {{"nk", t.dims.nk}, {"nphi", t.dims.nphi}, {"nu", t.dims.nu}, {"ny", t.dims.ny}}},
          {"activation", to_string(t.activation)},
          {"matrices",
           {{"A_k", matrix_to_json(t.A_k)},
            {"B_kw", matrix_to_json(t.B_kw)},
            {"B_ky", matrix_to_json(t.B_ky)},
            {"C_kv", matrix_to_json(t.C_kv)},
            {"D_kvw", matrix_to_json(t.D_kvw)},
            {"D_kvy", matrix_to_json(t.D_kvy)},
            {"C_ku", matrix_to_json(t.C_ku)},
            {"D_kuw", matrix_to_json(t.D_kuw)},
            {"D_kuy", matrix_to_json(t.D_kuy)}}}};
}

RinnParams controller_from_json(const json& j) {
  const json& dj = require(j, "dims", "controller");
  ControllerDims d;
  d.nk = require(dj, "nk", "controller.dims").get<int>();
  d.nphi = require(dj, "nphi", "controller.dims").get<int>();
  d.nu = require(dj, "nu", "controller.dims").get<int>();
  d.ny = require(dj, "ny", "controller.dims").get<int>();
  Activation act = Activation::Tanh;
  if (j.contains("activation")) act = activation_from_string(j.at("activation").get<std::string>());
  RinnParams t = RinnParams::zeros(d, act);
  // Missing matrices are zero; a flat layout without "matrices" is accepted.
  const json& mj = j.contains("matrices") ? j.at("matrices") : j;
  const auto load = [&](const char* key, Eigen::MatrixXd& m) {
    if (mj.contains(key)) m = matrix_from_json(mj.at(key), m.rows(), m.cols(), std::string("controller.") + key);
  };
  load("A_k", t.A_k);
  load("B_kw", t.B_kw);
  load("B_ky", t.B_ky);
  load("C_kv", t.C_kv);
  load("D_kvw", t.D_kvw);
  load("D_kvy", t.D_kvy);
  load("C_ku", t.C_ku);
  load("D_kuw", t.D_kuw);
  load("D_kuy", t.D_kuy);
  t.validate();
  return t;
}

json certificate_to_json(const Certificate& c) {
  return {{"X", matrix_to_json(c.X)},
          {"lambda_p", vector_to_json(c.multipliers.lambda_p)},
          {"lambda_k", vector_to_json(c.multipliers.lambda_k)},
          {"alpha", c.margin.alpha},
          {"sigma", c.margin.sigma}};
}

Certificate certificate_from_json(const json& j) {
  Certificate c;
  c.X = matrix_from_json(require(j, "X", "certificate"), "certificate.X");
  if (c.X.rows() != c.X.cols()) throw DimensionError("certificate.X must be square");
  c.multipliers.lambda_p = vector_from_json(require(j, "lambda_p", "certificate"), "certificate.lambda_p");
  c.multipliers.lambda_k = vector_from_json(require(j, "lambda_k", "certificate"), "certificate.lambda_k");
  c.margin.alpha = require(j, "alpha", "certificate").get<double>();
  c.margin.sigma = require(j, "sigma", "certificate").get<double>();
  c.margin.validate();
  c.multipliers.alpha = c.margin.alpha;
  return c;
}

json checkpoint_to_json(const Checkpoint& ck) {
  json j = controller_to_json(ck.theta);
  j["iteration"] = ck.iteration;
  j["env_steps"] = ck.env_steps;
  j["rng_state"] = ck.rng_state;
  j["certificate"] = ck.certificate ? certificate_to_json(*ck.certificate) : json(nullptr);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  Checkpoint ck;
  ck.theta = controller_from_json(j);
  ck.iteration = require(j, "iteration", "checkpoint").get<int>();
  ck.env_steps = require(j, "env_steps", "checkpoint").get<std::uint64_t>();
  ck.rng_state = require(j, "rng_state", "checkpoint").get<std::string>();
  if (j.contains("certificate") && !j.at("certificate").is_null()) {
    ck.certificate = certificate_from_json(j.at("certificate"));
  }
  return ck;
}

json sim_config_to_json(const SimConfig& c) {
  json ranges = json::array();
  for (const auto& r : c.init_ranges) ranges.push_back({r.lo, r.hi});
  json j = {{"dt", c.dt}, {"horizon", c.horizon}, {"init_ranges", ranges}, {"seed", c.seed}};
  j["input_saturation"] = std::isfinite(c.input_saturation) ? json(c.input_saturation) : json(nullptr);
  return j;
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  if (j.is_null()) return c;
  read_opt(j, "dt", c.dt);
  read_opt(j, "horizon", c.horizon);
  if (j.contains("input_saturation")) {
    c.input_saturation = j.at("input_saturation").is_null() ? std::numeric_limits<double>::infinity()
                                                            : j.at("input_saturation").get<double>();
  }
  read_opt(j, "seed", c.seed);
  if (j.contains("init_ranges")) {
    for (const auto& r : j.at("init_ranges")) {
      if (!r.is_array() || r.size() != 2) throw DomainError("sim.init_ranges: expected [lo, hi] pairs");
      c.init_ranges.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    }
  }
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"plant_design", plant_to_json(c.plant_design)},
          {"plant_sim", plant_to_json(c.plant_sim)},
          {"margin", {{"alpha", c.margin.alpha}, {"sigma", c.margin.sigma}}},
          {"dims", {{"nk", c.nk}, {"nphi", c.nphi}}},
          {"activation", to_string(c.activation)},
          {"sim", sim_config_to_json(c.sim)},
          {"rl",
           {{"population", c.rl.population},
            {"es_sigma", c.rl.es_sigma},
            {"learning_rate", c.rl.learning_rate},
            {"episodes_per_eval", c.rl.episodes_per_eval},
            {"noise_start", c.rl.noise_start},
            {"noise_end", c.rl.noise_end},
            {"eval_episodes", c.rl.eval_episodes},
            {"max_step_norm", std::isfinite(c.rl.max_step_norm) ? json(c.rl.max_step_norm) : json(nullptr)}}},
          {"iterations", c.iterations},
          {"mode", to_string(c.mode)},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"threads", c.threads},
          {"enforce", c.enforce}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw DomainError("config: expected an object");
  TrainConfig c;
  c.plant_design = plant_from_json(j.contains("plant_design") ? j.at("plant_design") : json("rigid-rod"));
  c.plant_sim = plant_from_json(j.contains("plant_sim") ? j.at("plant_sim") : json("flexible-rod"));
  if (j.contains("margin")) {
    read_opt(j.at("margin"), "alpha", c.margin.alpha);
    read_opt(j.at("margin"), "sigma", c.margin.sigma);
  }
  if (j.contains("dims")) {
    read_opt(j.at("dims"), "nk", c.nk);
    read_opt(j.at("dims"), "nphi", c.nphi);
  }
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  if (j.contains("sim")) c.sim = sim_config_from_json(j.at("sim"));
  if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("rl")) {
    const json& r = j.at("rl");
    read_opt(r, "population", c.rl.population);
    read_opt(r, "es_sigma", c.rl.es_sigma);
    if (r.contains("learning_rate")) {
      c.rl.learning_rate = r.at("learning_rate").get<double>();
    } else if (c.mode != TrainMode::Constrained) {
      c.rl.learning_rate = 1e-4;
    }
    read_opt(r, "episodes_per_eval", c.rl.episodes_per_eval);
    read_opt(r, "noise_start", c.rl.noise_start);
    read_opt(r, "noise_end", c.rl.noise_end);
    read_opt(r, "eval_episodes", c.rl.eval_episodes);
    if (r.contains("max_step_norm")) {
      c.rl.max_step_norm = r.at("max_step_norm").is_null() ? std::numeric_limits<double>::infinity()
                                                           : r.at("max_step_norm").get<double>();
    }
  } else if (c.mode != TrainMode::Constrained) {
    c.rl.learning_rate = 1e-4;
  }
  read_opt(j, "iterations", c.iterations);
  read_opt(j, "seed", c.seed);
  read_opt(j, "checkpoint_every", c.checkpoint_every);
  read_opt(j, "threads", c.threads);
  read_opt(j, "enforce", c.enforce);
  c.validate();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DomainError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace marginnet::io
