#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vib/attack.hpp"
#include "vib/data.hpp"
#include "vib/train.hpp"

namespace vib {

using Json = nlohmann::json;

struct IdxSource {
  std::filesystem::path train_images, train_labels, test_images, test_labels;
};

struct CsvSource {
  std::filesystem::path train, test;
  std::size_t dim = 0;
};

struct SynthSource {
  std::size_t classes = 3;
  std::size_t dim = 8;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double separation = 3.0;
};

struct DataConfig {
  std::optional<IdxSource> idx;
  std::optional<CsvSource> csv;
  std::optional<SynthSource> synth;
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;

  void validate() const;
};

struct AttackRunConfig {
  attack::AttackConfig attack;
  std::size_t n = 10;
  std::optional<int> source_label;  // attack the first n test examples with this label
  std::filesystem::path baseline_checkpoint;
};

struct Embed2dConfig {
  std::size_t n = 500;
  std::size_t grid = 41;
  double extent = 4.0;
};

struct GradcheckConfig {
  double tolerance = 1e-5;
  bool sign_flip_fault = false;
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;
  ObjectiveConfig objective;
  TrainConfig train;
  AttackRunConfig attack;
  std::vector<double> betas;  // ibcurve
  Embed2dConfig embed2d;
  GradcheckConfig gradcheck;
  std::filesystem::path checkpoint;  // eval / attack / embed2d input
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;

  void validate() const;
};

/// Applies APP_<FIELD>=value overrides from `env` (name, value) pairs. Nested fields
/// use a double underscore: APP_TRAIN__EPOCHS=5. Values parse as JSON, else as strings.
void apply_env_overrides(Json& j, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> app_environment();

ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path, bool use_env = true);

Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j);
Json to_json(const ObjectiveConfig& o);
ObjectiveConfig objective_from_json(const Json& j);
Json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const Json& j);
attack::AttackConfig attack_config_from_json(const Json& j);

struct Splits {
  Dataset train;
  Dataset test;
};

/// Loads (or synthesizes) both splits; IDX pixels are scaled to [-1, 1].
Splits load_data(const DataConfig& cfg, std::uint64_t seed);

}  // namespace vib
