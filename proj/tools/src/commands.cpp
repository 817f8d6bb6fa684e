#include "commands.hpp"

#include <milk/error.hpp>
#include <milk/eval.hpp>
#include <milk/gradcheck.hpp>
#include <milk/io.hpp>
#include <milk/model.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace milk::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string ratio_string(double r) {
  std::ostringstream s;
  s << r;
  return s.str();
}

fs::path relative_to(const fs::path& path, const fs::path& base) {
  return fs::proximate(fs::absolute(path), fs::absolute(base));
}

std::string safe_name(std::string_view variant) {
  std::string s(variant);
  for (char& c : s) {
    if (c == ':') c = '_';
  }
  return s;
}

struct Dataset {
  fs::path interactions;
  std::vector<fs::path> features;
};

Dataset resolve_dataset(const RunConfig& c) {
  if (!c.interactions.empty()) {
    if (c.features.empty()) throw ConfigError("features are required when interactions are given");
    return {c.interactions, c.features};
  }
  const fs::path descriptor = c.out / "dataset.json";
  if (!fs::exists(descriptor)) {
    throw ConfigError("no interactions given and no " + descriptor.string() + " (run generate or set interactions)");
  }
  const json j = json::parse(read_text_file(descriptor));
  Dataset d;
  d.interactions = c.out / j.at("interactions").get<std::string>();
  for (const auto& f : j.at("features")) d.features.push_back(c.out / f.get<std::string>());
  return d;
}

struct LoadedSplit {
  SplitManifest manifest;
  DatasetBundle bundle;
};

LoadedSplit load_split(const RunConfig& c) {
  const fs::path path = c.manifest_path();
  if (!fs::exists(path)) throw ConfigError("manifest " + path.string() + " not found (run split first)");
  LoadedSplit s;
  s.manifest = load_manifest(path);
  s.bundle = replay_manifest(s.manifest, path.parent_path());
  return s;
}

std::vector<Variant> expand_variants(const std::vector<std::string>& names) {
  if (names.empty()) return module_ablation_variants();
  std::vector<Variant> out;
  for (const auto& n : names) {
    std::vector<Variant> add;
    if (n == "modules") add = module_ablation_variants();
    else if (n == "environments") add = environment_variants();
    else if (n == "imputation") add = imputation_variants();
    else add = {parse_variant(n)};
    for (auto v : add) {
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
  }
  return out;
}

}  // namespace

int cmd_generate(const RunConfig& c, std::ostream& out) {
  const SyntheticData data = generate_synthetic(c.synthetic);
  write_interactions(c.out / "interactions.tsv", data.interactions);
  json descriptor;
  descriptor["seed"] = c.seed;
  descriptor["synthetic"] = config_to_json(c)["synthetic"];
  descriptor["interactions"] = "interactions.tsv";
  descriptor["features"] = json::array();
  for (std::size_t m = 0; m < data.features.n_modalities(); ++m) {
    const std::string name = "features_m" + std::to_string(m) + ".mfea";
    write_feature_matrix_binary(c.out / name, data.features.matrix(m));
    descriptor["features"].push_back(name);
  }
  descriptor["n_users"] = data.interactions.n_users();
  descriptor["n_items"] = data.features.n_items();
  write_text_file(c.out / "dataset.json", descriptor.dump(2) + "\n");
  out << "generated " << data.interactions.n_users() << " users, " << data.features.n_items() << " items, "
      << data.interactions.size() << " interactions, " << data.features.n_modalities() << " modalities -> "
      << c.out.string() << '\n';
  return 0;
}

int cmd_split(const RunConfig& c, std::ostream& out) {
  const Dataset d = resolve_dataset(c);
  const FeatureFormat format = c.feature_format.value_or(feature_format_from_path(d.features.front()));
  ModalityFeatureBank features = load_features(d.features, format);
  const InteractionSet interactions = load_interactions(d.interactions);
  DatasetBundle bundle = make_new_item_split(interactions, std::move(features), c.new_ratio, c.seed);

  SplitManifest m;
  if (!c.mask.empty()) {
    const AvailabilityMask observed = load_mask_csv(c.mask);
    if (observed.n_items() != bundle.features.n_items() || observed.n_modalities() != bundle.features.n_modalities()) {
      throw DimensionError("mask shape does not match the feature bank");
    }
    bundle.train_mask = observed;
    bundle.test_mask = observed;
    m.protocol = "observed";
  } else {
    const MissingnessProtocol protocol = parse_protocol(c.protocol);
    MaskPair masks = apply_missingness(bundle, protocol, c.missingness, c.seed);
    bundle.train_mask = std::move(masks.train_mask);
    bundle.test_mask = std::move(masks.test_mask);
    m.protocol = std::string(to_string(protocol));
    m.missingness = protocol_params(protocol, c.missingness);
  }
  write_mask_csv(c.out / "train_mask.csv", bundle.train_mask);
  write_mask_csv(c.out / "test_mask.csv", bundle.test_mask);

  m.interactions = relative_to(d.interactions, c.out);
  for (const auto& f : d.features) m.features.push_back(relative_to(f, c.out));
  m.train_mask = "train_mask.csv";
  m.test_mask = "test_mask.csv";
  m.n_users = interactions.n_users();
  m.n_items = bundle.features.n_items();
  m.seed = c.seed;
  m.new_ratio = c.new_ratio;
  m.warm_items = bundle.warm_items;
  m.val_items = bundle.val_items;
  m.test_items = bundle.test_items;
  write_manifest(c.out / "manifest.json", m);

  std::size_t masked_test = 0;
  for (ItemId j : bundle.test_items) masked_test += bundle.test_mask.missing_count(j) > 0 ? 1 : 0;
  out << "split " << m.n_items << " items: " << m.warm_items.size() << " warm, " << m.val_items.size() << " val, "
      << m.test_items.size() << " test (" << masked_test << " test items with missing modalities, protocol "
      << m.protocol << ", new_ratio " << ratio_string(c.new_ratio) << ")\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const LoadedSplit s = load_split(c);
  const Variant variant = parse_variant(c.variant);
  const TrainConfig config = apply_variant(c.train, variant);
  const ModalityFeatureBank features = impute_bundle_features(s.bundle, config.impute);

  const fs::path history_path = c.out / "history.jsonl";
  fs::create_directories(c.out);
  std::ofstream history(history_path, std::ios::trunc);
  if (!history) throw ConfigError("cannot open '" + history_path.string() + "' for writing");

  const TrainResult result = train(s.bundle, features, config, [&](const EpochRecord& r) {
    history << to_json_line(r) << '\n';
    out << "epoch " << r.epoch << " loss " << r.loss.total;
    if (r.val_recall20) out << " val_recall@20 " << *r.val_recall20;
    out << '\n';
  });
  history.flush();

  save_checkpoint(c.checkpoint_path(), result.params);
  json summary;
  summary["variant"] = c.variant;
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_recall@20"] = result.best_val_recall20;
  summary["epochs_run"] = result.history.size();
  summary["early_stopped"] = result.early_stopped;
  summary["diverged"] = result.diverged;
  summary["divergence_message"] = result.divergence_message;
  summary["impute"] = std::string(to_string(config.impute));
  summary["config"] = config_to_json(c);
  write_text_file(c.checkpoint_path().parent_path() / "train.json", summary.dump(2) + "\n");

  if (result.diverged) {
    out << "training diverged: " << result.divergence_message << "; kept checkpoint from epoch "
        << result.best_epoch << '\n';
    return static_cast<int>(ErrorKind::numerical);
  }
  out << "best epoch " << result.best_epoch << " (val recall@20 " << result.best_val_recall20 << "), checkpoint "
      << c.checkpoint_path().string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  const LoadedSplit s = load_split(c);
  const ModelParams params = load_checkpoint(c.checkpoint_path());
  if (params.n_modalities() != s.bundle.features.n_modalities() ||
      params.feature_dims() != s.bundle.features.dims()) {
    throw DimensionError("checkpoint extractors do not match the dataset feature dimensions");
  }
  const TrainConfig config = apply_variant(c.train, parse_variant(c.variant));
  const ModalityFeatureBank features = impute_bundle_features(s.bundle, config.impute);
  const Split split = parse_split(c.split);
  MetricReport report = evaluate(s.bundle, params, features, split, c.ks, true);
  report.protocol = s.manifest.protocol;

  const std::string name(to_string(split));
  const std::string text = report_to_json(report);
  write_text_file(c.out / "metrics" / (name + ".json"), text + "\n");
  write_text_file(c.out / "metrics" / (name + ".csv"), reports_to_csv({{c.variant, report}}));
  out << text << '\n';
  return 0;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  GradCheckOptions options;
  options.corrupt_gradient = c.corrupt_gradient;
  std::uint64_t round = 0;
  do {
    for (auto& t : default_gradcheck_trials(c.seed + round++)) {
      if (c.gradcheck_trials > 0 && options.trials.size() == c.gradcheck_trials) break;
      options.trials.push_back(t);
    }
  } while (options.trials.size() < c.gradcheck_trials);

  const GradCheckReport report = finite_diff_check(options);
  const std::string text = report_to_json(report, kGradCheckTolerance);
  write_text_file(c.out / "gradcheck.json", text + "\n");
  out << text << '\n';
  const bool ok = report.max_rel_err <= kGradCheckTolerance;
  out << "max_rel_err " << std::scientific << std::setprecision(3) << report.max_rel_err << (ok ? " <= " : " > ")
      << kGradCheckTolerance << std::defaultfloat << '\n';
  return ok ? 0 : static_cast<int>(ErrorKind::numerical);
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const LoadedSplit s = load_split(c);
  const std::vector<Variant> variants = expand_variants(c.variants);
  std::vector<std::pair<std::string, MetricReport>> rows;
  bool diverged = false;
  for (Variant v : variants) {
    AblationOutcome outcome = run_ablation(s.bundle, c.train, v, c.ks, s.manifest.protocol);
    const std::string name(to_string(v));
    write_text_file(c.out / "metrics" / "ablation" / (safe_name(name) + ".json"), report_to_json(outcome.report) + "\n");
    out << name << ": best epoch " << outcome.training.best_epoch;
    for (const auto& [k, m] : outcome.report.at_k) out << ", recall@" << k << ' ' << m.recall << ", ndcg@" << k << ' ' << m.ndcg;
    if (outcome.training.diverged) {
      diverged = true;
      out << " (diverged: " << outcome.training.divergence_message << ")";
    }
    out << '\n';
    rows.emplace_back(name, std::move(outcome.report));
  }
  write_text_file(c.out / "metrics" / "ablation.csv", comparison_table_csv(rows));
  write_text_file(c.out / "metrics" / "ablation_long.csv", reports_to_csv(rows));
  out << "wrote " << (c.out / "metrics" / "ablation.csv").string() << '\n';
  return diverged ? static_cast<int>(ErrorKind::numerical) : 0;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

enum class Kind { number, text, numbers, texts, flag };

struct FlagSpec {
  const char* flag;
  const char* pointer;  // JSON pointer into the config document
  Kind kind;
  const char* help;
};

const std::vector<FlagSpec> kTrainFlags{
    {"--beta", "/beta", Kind::number, "variance penalty weight"},
    {"--lambda", "/lambda", Kind::number, "alignment loss weight"},
    {"--alpha", "/alpha", Kind::number, "Dirichlet concentration"},
    {"--gamma-reg", "/gamma_reg", Kind::number, "L2 weight"},
    {"--lr", "/lr", Kind::number, "Adam learning rate"},
    {"--dim", "/dim", Kind::number, "representation dimension"},
    {"--batch-size", "/batch_size", Kind::number, "triples per step"},
    {"--max-epochs", "/max_epochs", Kind::number, "epoch limit"},
    {"--patience", "/patience", Kind::number, "evaluations without improvement before stopping"},
    {"--eval-every", "/eval_every", Kind::number, "validation interval in epochs"},
    {"--steps-per-epoch", "/steps_per_epoch", Kind::number, "0 = one pass over the training pairs"},
    {"--env-variant", "/env_variant", Kind::text, "full|no_e0|no_cyclic_shift|frozen|equal_only"},
    {"--impute", "/impute", Kind::text, "zero|mean|map"},
    {"--init-std", "/init_std", Kind::number, "parameter init standard deviation"},
};

const std::vector<FlagSpec> kSplitInput{
    {"--manifest", "/manifest", Kind::text, "split manifest (default <out>/manifest.json)"},
};

std::vector<FlagSpec> concat(std::initializer_list<std::vector<FlagSpec>> parts) {
  std::vector<FlagSpec> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct Subcommand {
  const char* name;
  const char* help;
  std::vector<FlagSpec> flags;
  int (*run)(const RunConfig&, std::ostream&);
};

std::vector<Subcommand> subcommands() {
  return {
      {"generate",
       "write a seeded synthetic dataset",
       {{"--n-users", "/synthetic/n_users", Kind::number, "users"},
        {"--n-items", "/synthetic/n_items", Kind::number, "items"},
        {"--k", "/synthetic/k", Kind::number, "latent dimension"},
        {"--modalities", "/synthetic/n_modalities", Kind::number, "number of modalities"},
        {"--dims", "/synthetic/dims", Kind::numbers, "feature dimension per modality"},
        {"--noise-std", "/synthetic/noise_std", Kind::number, "feature noise"},
        {"--modality-noise", "/synthetic/modality_noise", Kind::numbers, "per-modality noise multipliers"},
        {"--interactions-per-user", "/synthetic/interactions_per_user", Kind::number, "positives per user"},
        {"--gumbel-scale", "/synthetic/gumbel_scale", Kind::number, "preference noise scale"}},
       cmd_generate},
      {"split",
       "hold out new items and simulate missing modalities",
       {{"--interactions", "/interactions", Kind::text, "user<TAB>item file"},
        {"--features", "/features", Kind::texts, "one feature file per modality"},
        {"--feature-format", "/feature_format", Kind::text, "csv|binary"},
        {"--mask", "/mask", Kind::text, "observed availability mask CSV"},
        {"--protocol", "/protocol", Kind::text, "FTFT|FTMT|MTMT|custom"},
        {"--new-ratio", "/new_ratio", Kind::number, "fraction of items held out as new"},
        {"--train-missing-ratio", "/missingness/train_missing_ratio", Kind::number, "custom protocol"},
        {"--test-missing-ratio", "/missingness/test_missing_ratio", Kind::number, "custom protocol"},
        {"--max-missing-per-item", "/missingness/max_missing_per_item", Kind::number, "custom protocol"}},
       cmd_split},
      {"train",
       "train a model on a split",
       concat({kSplitInput,
               kTrainFlags,
               {{"--variant", "/variant", Kind::text, "full|no_cmam|no_ceim|no_both|env:*|impute:*"},
                {"--checkpoint", "/checkpoint", Kind::text, "output checkpoint (default <out>/ckpt/model.mckp)"}}}),
       cmd_train},
      {"evaluate",
       "score new items and write metrics",
       concat({kSplitInput,
               {{"--checkpoint", "/checkpoint", Kind::text, "checkpoint (default <out>/ckpt/model.mckp)"},
                {"--variant", "/variant", Kind::text, "variant the checkpoint was trained with (sets imputation)"},
                {"--impute", "/impute", Kind::text, "zero|mean|map"},
                {"--split", "/split", Kind::text, "val|test"},
                {"--ks", "/Ks", Kind::numbers, "cutoffs"}}}),
       cmd_evaluate},
      {"gradcheck",
       "compare analytic gradients with central differences",
       {{"--trials", "/gradcheck_trials", Kind::number, "number of randomized instances"},
        {"--corrupt-gradient", "/corrupt_gradient", Kind::flag, ""}},
       cmd_gradcheck},
      {"ablate",
       "train and evaluate several variants on one split",
       concat({kSplitInput,
               kTrainFlags,
               {{"--variants", "/variants", Kind::texts, "variant names or modules|environments|imputation"},
                {"--ks", "/Ks", Kind::numbers, "cutoffs"}}}),
       cmd_ablate},
  };
}

json parse_value(const std::string& raw, Kind kind, const std::string& flag) {
  if (kind == Kind::text) return raw;
  try {
    json v = json::parse(raw);
    if (!v.is_number()) throw ConfigError(flag + " expects a number, got '" + raw + "'");
    return v;
  } catch (const json::parse_error&) {
    throw ConfigError(flag + " expects a number, got '" + raw + "'");
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal new-item recommendation robust to missing modalities", "milk"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed (mandatory here or in the config)");
  app.add_option("--out", out_dir, "output directory");

  const auto commands = subcommands();
  std::map<std::string, std::vector<std::string>> raw;  // keyed by JSON pointer
  std::map<std::string, bool> flags;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->fallthrough();
    for (const auto& f : cmd.flags) {
      if (f.kind == Kind::flag) {
        sub->add_flag(f.flag, flags[f.pointer], f.help)->group(std::string(f.help).empty() ? "" : "Options");
      } else {
        auto* opt = sub->add_option(f.flag, raw[f.pointer], f.help);
        const bool list = f.kind == Kind::numbers || f.kind == Kind::texts;
        if (list) opt->delimiter(',')->expected(1, -1);
        else opt->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        opt->type_name(f.kind == Kind::text ? "TEXT" : f.kind == Kind::number ? "NUM" : list ? "LIST" : "");
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    json doc = config_path.empty() ? json::object() : load_config_json(config_path);
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    if (seed) doc["seed"] = *seed;
    if (!out_dir.empty()) doc["out"] = out_dir;

    const Subcommand* chosen = nullptr;
    for (const auto& cmd : commands) {
      if (app.got_subcommand(cmd.name)) chosen = &cmd;
    }
    for (const auto& f : chosen->flags) {
      const json::json_pointer ptr(f.pointer);
      if (f.kind == Kind::flag) {
        if (flags[f.pointer]) doc[ptr] = true;
        continue;
      }
      const auto& values = raw[f.pointer];
      if (values.empty()) continue;
      if (f.kind == Kind::numbers || f.kind == Kind::texts) {
        json list = json::array();
        for (const auto& v : values) list.push_back(parse_value(v, f.kind == Kind::numbers ? Kind::number : Kind::text, f.flag));
        doc[ptr] = list;
      } else {
        doc[ptr] = parse_value(values.back(), f.kind, f.flag);
      }
    }
    const RunConfig config = config_from_json(doc);
    return chosen->run(config, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::usage);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace milk::cli
