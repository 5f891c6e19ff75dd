#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "marginnet/certify.hpp"
#include "marginnet/controller.hpp"
#include "marginnet/plant.hpp"
#include "marginnet/sim.hpp"
#include "marginnet/train.hpp"

namespace marginnet::io {

using nlohmann::json;

/// Row-major nested arrays. A matrix with zero rows is [].
json matrix_to_json(const Eigen::MatrixXd& m);
/// Checks the shape against (rows, cols); throws DimensionError naming `field`.
Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& field);
/// Shape taken from the data; [] is 0 x 0.
Eigen::MatrixXd matrix_from_json(const json& j, const std::string& field);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j, const std::string& field);

json rod_parameters_to_json(const RodParameters& p);
/// Missing fields keep their defaults.
RodParameters rod_parameters_from_json(const json& j);

/// Built-in plants: "rigid-rod" and "flexible-rod".
PlantModel plant_by_name(const std::string& name, const RodParameters& params = {});

/// {"A": [[...]], "B": [[...]], "C": [[...]]}
json plant_to_json(const PlantModel& plant);
/// Explicit matrices, {"model": "rigid-rod" | "flexible-rod", "params": {...}},
/// or a bare model name string.
PlantModel plant_from_json(const json& j);
/// A built-in name or the path of a plant JSON file.
PlantModel load_plant(const std::string& file_or_name);

/// {"dims": {"nk", "nphi", "nu", "ny"}, "activation": "tanh" | "relu",
///  "matrices": {"A_k": ..., "B_kw": ..., ..., "D_kuy": ...}}
json controller_to_json(const RinnParams& theta);
RinnParams controller_from_json(const json& j);

/// {"X": [[...]], "lambda_p": [...], "lambda_k": [...], "alpha": a, "sigma": s}
json certificate_to_json(const Certificate& cert);
Certificate certificate_from_json(const json& j);

/// The controller object plus "iteration", "env_steps", "rng_state" and
/// "certificate" (null when absent).
json checkpoint_to_json(const Checkpoint& ck);
Checkpoint checkpoint_from_json(const json& j);

json sim_config_to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const json& j);

/// Field names mirror TrainConfig; plants are given as in plant_from_json.
/// Missing fields keep their defaults, except that plant_design defaults to
/// rigid-rod and plant_sim to flexible-rod.
json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace marginnet::io
