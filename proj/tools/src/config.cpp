#include "config.hpp"

#include <milk/error.hpp>
#include <milk/io.hpp>

#include <set>

namespace milk::cli {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out) {
  std::string s;
  read(j, key, s);
  if (!s.empty()) out = s;
}

SyntheticSpec synthetic_from_json(const json& j) {
  reject_unknown(j,
                 {"n_users", "n_items", "k", "n_modalities", "dims", "noise_std", "interactions_per_user",
                  "modality_noise", "shared_projection", "gumbel_scale", "nuisance_dim", "nuisance_std"},
                 "synthetic.");
  SyntheticSpec s;
  read(j, "n_users", s.n_users);
  read(j, "n_items", s.n_items);
  read(j, "k", s.k);
  read(j, "n_modalities", s.n_modalities);
  read(j, "noise_std", s.noise_std);
  read(j, "interactions_per_user", s.interactions_per_user);
  read(j, "modality_noise", s.modality_noise);
  read(j, "shared_projection", s.shared_projection);
  read(j, "gumbel_scale", s.gumbel_scale);
  read(j, "nuisance_dim", s.nuisance_dim);
  read(j, "nuisance_std", s.nuisance_std);
  if (j.contains("dims")) {
    read(j, "dims", s.dims);
  } else if (s.n_modalities != s.dims.size()) {
    s.dims.assign(s.n_modalities, s.dims.front());
  }
  return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
  return {{"n_users", s.n_users},
          {"n_items", s.n_items},
          {"k", s.k},
          {"n_modalities", s.n_modalities},
          {"dims", s.dims},
          {"noise_std", s.noise_std},
          {"interactions_per_user", s.interactions_per_user},
          {"modality_noise", s.modality_noise},
          {"shared_projection", s.shared_projection},
          {"gumbel_scale", s.gumbel_scale},
          {"nuisance_dim", s.nuisance_dim},
          {"nuisance_std", s.nuisance_std}};
}

}  // namespace

std::filesystem::path RunConfig::manifest_path() const {
  return manifest.empty() ? out / "manifest.json" : manifest;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? out / "ckpt" / "model.mckp" : checkpoint;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j,
                 {"seed",          "out",        "synthetic",   "interactions", "features",    "feature_format",
                  "mask",          "protocol",   "missingness", "new_ratio",    "manifest",    "checkpoint",
                  "beta",          "lambda",     "alpha",       "gamma_reg",    "lr",          "dim",
                  "batch_size",    "max_epochs", "patience",    "eval_every",   "steps_per_epoch",
                  "env_variant",   "impute",     "init_std",    "variant",      "variants",    "Ks",
                  "split",         "gradcheck_trials", "corrupt_gradient"},
                 "");
  RunConfig c;
  if (!j.contains("seed") || j.at("seed").is_null()) throw ConfigError("seed is mandatory (config key 'seed' or --seed)");
  read(j, "seed", c.seed);
  read_path(j, "out", c.out);
  if (j.contains("synthetic")) c.synthetic = synthetic_from_json(j.at("synthetic"));
  c.synthetic.seed = c.seed;

  read_path(j, "interactions", c.interactions);
  std::vector<std::string> features;
  read(j, "features", features);
  for (auto& f : features) c.features.emplace_back(f);
  if (j.contains("feature_format")) {
    std::string f;
    read(j, "feature_format", f);
    if (f == "csv") c.feature_format = FeatureFormat::csv;
    else if (f == "binary" || f == "mfea") c.feature_format = FeatureFormat::binary;
    else throw ConfigError("feature_format must be 'csv' or 'binary'");
  }
  read_path(j, "mask", c.mask);

  read(j, "protocol", c.protocol);
  parse_protocol(c.protocol);
  if (j.contains("missingness")) {
    const json& m = j.at("missingness");
    reject_unknown(m, {"train_missing_ratio", "test_missing_ratio", "max_missing_per_item"}, "missingness.");
    read(m, "train_missing_ratio", c.missingness.train_missing_ratio);
    read(m, "test_missing_ratio", c.missingness.test_missing_ratio);
    read(m, "max_missing_per_item", c.missingness.max_missing_per_item);
  }
  read(j, "new_ratio", c.new_ratio);
  read_path(j, "manifest", c.manifest);
  read_path(j, "checkpoint", c.checkpoint);

  TrainConfig& t = c.train;
  read(j, "beta", t.beta);
  read(j, "lambda", t.lambda);
  read(j, "alpha", t.alpha);
  read(j, "gamma_reg", t.gamma_reg);
  read(j, "lr", t.lr);
  read(j, "dim", t.dim);
  read(j, "batch_size", t.batch_size);
  read(j, "max_epochs", t.max_epochs);
  read(j, "patience", t.patience);
  read(j, "eval_every", t.eval_every);
  read(j, "steps_per_epoch", t.steps_per_epoch);
  read(j, "init_std", t.init_std);
  std::string s;
  read(j, "env_variant", s);
  if (!s.empty()) t.env_variant = parse_env_variant(s);
  s.clear();
  read(j, "impute", s);
  if (!s.empty()) t.impute = parse_impute_strategy(s);
  t.seed = c.seed;

  read(j, "variant", c.variant);
  parse_variant(c.variant);
  read(j, "variants", c.variants);
  read(j, "Ks", c.ks);
  if (c.ks.empty()) throw ConfigError("Ks must not be empty");
  for (auto k : c.ks) {
    if (k == 0) throw ConfigError("every K must be >= 1");
  }
  read(j, "split", c.split);
  parse_split(c.split);
  read(j, "gradcheck_trials", c.gradcheck_trials);
  read(j, "corrupt_gradient", c.corrupt_gradient);
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out.generic_string();
  j["synthetic"] = synthetic_to_json(c.synthetic);
  j["interactions"] = c.interactions.generic_string();
  j["features"] = json::array();
  for (const auto& f : c.features) j["features"].push_back(f.generic_string());
  if (c.feature_format) j["feature_format"] = *c.feature_format == FeatureFormat::csv ? "csv" : "binary";
  j["mask"] = c.mask.generic_string();
  j["protocol"] = c.protocol;
  j["missingness"] = {{"train_missing_ratio", c.missingness.train_missing_ratio},
                      {"test_missing_ratio", c.missingness.test_missing_ratio},
                      {"max_missing_per_item", c.missingness.max_missing_per_item}};
  j["new_ratio"] = c.new_ratio;
  j["manifest"] = c.manifest.generic_string();
  j["checkpoint"] = c.checkpoint.generic_string();
  const TrainConfig& t = c.train;
  j["beta"] = t.beta;
  j["lambda"] = t.lambda;
  j["alpha"] = t.alpha;
  j["gamma_reg"] = t.gamma_reg;
  j["lr"] = t.lr;
  j["dim"] = t.dim;
  j["batch_size"] = t.batch_size;
  j["max_epochs"] = t.max_epochs;
  j["patience"] = t.patience;
  j["eval_every"] = t.eval_every;
  j["steps_per_epoch"] = t.steps_per_epoch;
  j["env_variant"] = std::string(to_string(t.env_variant));
  j["impute"] = std::string(to_string(t.impute));
  j["init_std"] = t.init_std;
  j["variant"] = c.variant;
  j["variants"] = c.variants;
  j["Ks"] = c.ks;
  j["split"] = c.split;
  j["gradcheck_trials"] = c.gradcheck_trials;
  return j;
}

json load_config_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

}  // namespace milk::cli
