#include <milk/experiment.hpp>

#include <milk/error.hpp>

#include <string>

namespace milk {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::full: return "full";
    case Variant::no_cmam: return "no_cmam";
    case Variant::no_ceim: return "no_ceim";
    case Variant::no_both: return "no_both";
    case Variant::env_no_e0: return "env:no_e0";
    case Variant::env_no_cs: return "env:no_cs";
    case Variant::env_frozen: return "env:frozen";
    case Variant::impute_zero: return "impute:zero";
    case Variant::impute_mean: return "impute:mean";
    case Variant::impute_map: return "impute:map";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::no_cmam, Variant::no_ceim, Variant::no_both, Variant::env_no_e0,
                 Variant::env_no_cs, Variant::env_frozen, Variant::impute_zero, Variant::impute_mean,
                 Variant::impute_map}) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::vector<Variant> module_ablation_variants() {
  return {Variant::full, Variant::no_cmam, Variant::no_ceim, Variant::no_both};
}

std::vector<Variant> environment_variants() {
  return {Variant::full, Variant::env_no_e0, Variant::env_no_cs, Variant::env_frozen};
}

std::vector<Variant> imputation_variants() {
  return {Variant::impute_zero, Variant::impute_mean, Variant::impute_map, Variant::full};
}

TrainConfig apply_variant(TrainConfig config, Variant variant) {
  auto drop_ceim = [&] {
    config.env_variant = EnvVariant::equal_only;
    config.beta = 0.0;
  };
  switch (variant) {
    case Variant::full: break;
    case Variant::no_cmam: config.lambda = 0.0; break;
    case Variant::no_ceim: drop_ceim(); break;
    case Variant::no_both:
      drop_ceim();
      config.lambda = 0.0;
      break;
    case Variant::env_no_e0: config.env_variant = EnvVariant::no_e0; break;
    case Variant::env_no_cs: config.env_variant = EnvVariant::no_cyclic_shift; break;
    case Variant::env_frozen: config.env_variant = EnvVariant::frozen; break;
    case Variant::impute_zero:
    case Variant::impute_mean:
    case Variant::impute_map:
      drop_ceim();
      config.lambda = 0.0;
      config.impute = variant == Variant::impute_zero   ? ImputeStrategy::zero
                      : variant == Variant::impute_mean ? ImputeStrategy::mean
                                                        : ImputeStrategy::map;
      break;
  }
  return config;
}

AblationOutcome run_ablation(const DatasetBundle& bundle, const TrainConfig& base, Variant variant,
                             std::span<const std::size_t> ks, const std::string& protocol) {
  const TrainConfig config = apply_variant(base, variant);
  const ModalityFeatureBank features = impute_bundle_features(bundle, config.impute);
  AblationOutcome out{variant, train(bundle, features, config), {}};
  out.report = evaluate(bundle, out.training.params, features, Split::test, ks, true);
  out.report.protocol = protocol;
  return out;
}

}  // namespace milk
