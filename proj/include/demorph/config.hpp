#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "demorph/training.hpp"

namespace demorph {

using Json = nlohmann::ordered_json;

struct DataConfig {
  int identities = 16;
  int variations = 1;
  std::vector<double> alphas{0.5};
  std::uint64_t seed = 0;
  double train_fraction = 0.6;  // fraction of identity pairs used for training morphs
  int non_morph_probes = 20;    // bonafides fed to a demorpher during evaluation
};

struct ComparatorConfig {
  std::string kind = "toy";  // "toy" or "external"
  std::string command;       // external only
  double tau = 0.4;
};

// Everything one experiment needs. A run directory always holds the exact copy used.
struct ExperimentConfig {
  TrainConfig train;
  DataConfig data;
  ComparatorConfig comparator;
  std::string output_dir = "runs";
  bool write_grids = false;

  static ExperimentConfig desk(TrainMode mode);

  std::vector<std::string> problems() const;
  void validate() const;
};

std::string mode_name(TrainMode mode);
TrainMode parse_mode(const std::string& name);

Json to_json(const NetworkConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const ExperimentConfig& cfg);

// Parsers collect every type error and unknown key, then throw one ConfigError listing them.
NetworkConfig network_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
ExperimentConfig experiment_config_from_json(const Json& j);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

Json read_json_file(const std::filesystem::path& path);
// Two-space indented, trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace demorph
