#pragma once

#include <milk/datamodel.hpp>
#include <milk/experiment.hpp>
#include <milk/io.hpp>
#include <milk/train.hpp>

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace milk::cli {

/// One JSON document describing a run. Command-line flags are merged on top
/// of the file before conversion, so every flag has a config key.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";

  SyntheticSpec synthetic;

  // Dataset inputs for `split`; empty means <out>/dataset.json.
  std::filesystem::path interactions;
  std::vector<std::filesystem::path> features;
  std::optional<FeatureFormat> feature_format;
  // Observed availability (n_items x M); replaces simulated missingness.
  std::filesystem::path mask;

  std::string protocol = "FTMT";
  MissingnessParams missingness;
  double new_ratio = 0.2;

  // Empty means <out>/manifest.json and <out>/ckpt/model.mckp.
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;

  TrainConfig train;
  std::string variant = "full";
  std::vector<std::string> variants;
  std::vector<std::size_t> ks{10, 20};
  std::string split = "test";

  std::size_t gradcheck_trials = 0;  // 0 means the default trial set
  bool corrupt_gradient = false;

  std::filesystem::path manifest_path() const;
  std::filesystem::path checkpoint_path() const;
};

// Throws ConfigError on unknown keys, wrong types or a missing seed.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

nlohmann::json load_config_json(const std::filesystem::path& path);

}  // namespace milk::cli
