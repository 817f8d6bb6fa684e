#pragma once

#include <milk/datamodel.hpp>
#include <milk/eval.hpp>
#include <milk/train.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace milk {

enum class Variant {
  full,
  no_cmam,      // lambda = 0
  no_ceim,      // single equal-weight environment, beta = 0
  no_both,
  env_no_e0,
  env_no_cs,
  env_frozen,
  impute_zero,  // no_both trained and evaluated on zero-filled features
  impute_mean,
  impute_map,
};

std::string_view to_string(Variant variant);
Variant parse_variant(std::string_view name);

// The row sets of the three comparison tables.
std::vector<Variant> module_ablation_variants();
std::vector<Variant> environment_variants();
std::vector<Variant> imputation_variants();

TrainConfig apply_variant(TrainConfig config, Variant variant);

struct AblationOutcome {
  Variant variant;
  TrainResult training;
  MetricReport report;
};

// Bundle and seed are shared, only the configuration differs.
AblationOutcome run_ablation(const DatasetBundle& bundle, const TrainConfig& base, Variant variant,
                             std::span<const std::size_t> ks, const std::string& protocol);

}  // namespace milk
