#include <milk/gradcheck.hpp>

#include <milk/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace milk {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::vector<GradCheckTrial> default_gradcheck_trials(std::uint64_t seed) {
  const std::vector<ObjectiveWeights> objectives{
      {0.0, 0.0, 0.0},      // plain BPR over environments
      {1.0, 0.0, 0.0},      // variance only
      {0.0, 1.0, 0.0},      // alignment only
      {1000.0, 0.05, 1e-3}, // large variance penalty
      {50.0, 0.5, 1e-2},
      {10.0, 2.0, 0.0},
  };
  const std::vector<EnvVariant> variants{EnvVariant::full, EnvVariant::no_e0, EnvVariant::no_cyclic_shift,
                                         EnvVariant::frozen};
  std::vector<GradCheckTrial> trials;
  std::uint64_t k = 0;
  for (const auto& w : objectives) {
    for (std::size_t n_modalities : {std::size_t{2}, std::size_t{3}}) {
      for (bool masked : {false, true}) {
        GradCheckTrial t;
        t.n_modalities = n_modalities;
        t.weights = w;
        t.mask_modalities = masked;
        t.variant = variants[k % variants.size()];
        if (w.beta == 0.0 && k % 3 == 0) t.variant = EnvVariant::equal_only;
        t.seed = seed * 7919 + k;
        trials.push_back(t);
        ++k;
      }
    }
  }
  return trials;
}

namespace {

struct Instance {
  ModelParams params;
  TripleBatch batch;
  EnvironmentSet envs;
  ModalityFeatureBank features;
  AvailabilityMask mask;
};

Instance make_instance(const GradCheckTrial& trial) {
  Rng rng(trial.seed);
  std::vector<std::size_t> dims;
  for (std::size_t m = 0; m < trial.n_modalities; ++m) dims.push_back(trial.feature_dim + m);

  std::vector<Matrix> matrices;
  for (auto dx : dims) {
    Matrix x(static_cast<Eigen::Index>(trial.n_items), static_cast<Eigen::Index>(dx));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    matrices.push_back(std::move(x));
  }
  Instance inst{init_params(trial.n_users, dims, trial.dim, rng.fork_seed(), 0.5), {}, {},
                ModalityFeatureBank(std::move(matrices)), AvailabilityMask(trial.n_items, trial.n_modalities)};
  for (auto& b : inst.params.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.normal(0.0, 0.5);
  }

  if (trial.mask_modalities) {
    // Every other item loses one random modality.
    for (ItemId j = 0; j < trial.n_items; j += 2) {
      inst.mask.set_missing(j, static_cast<std::size_t>(rng.uniform_index(trial.n_modalities)));
    }
  }
  for (std::size_t t = 0; t < trial.batch_size; ++t) {
    const auto user = static_cast<UserId>(rng.uniform_index(trial.n_users));
    const auto pos = static_cast<ItemId>(rng.uniform_index(trial.n_items));
    auto neg = static_cast<ItemId>(rng.uniform_index(trial.n_items - 1));
    if (neg >= pos) ++neg;
    inst.batch.push_back({user, pos, neg});
  }
  const std::vector<double> alpha(trial.n_modalities, 0.7);
  if (trial.variant != EnvVariant::equal_only && trial.n_modalities < 2) throw ConfigError("gradcheck trial needs M >= 2");
  inst.envs = build_environments(trial.n_modalities, alpha, rng, trial.variant);
  return inst;
}

}  // namespace

GradCheckReport finite_diff_check(const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  std::map<std::string, TensorError> per_tensor;
  std::vector<std::string> order;

  for (const auto& trial : options.trials) {
    Instance inst = make_instance(trial);
    ModelParams analytic =
        loss_and_gradient(inst.params, inst.batch, inst.envs, inst.features, inst.mask, trial.weights).gradient;
    if (options.corrupt_gradient) {
      for (auto& t : tensors(analytic)) {
        for (double& v : t.values) v = 1.01 * v + 1e-3;
      }
    }

    auto objective = [&](const ModelParams& p) {
      return total_loss(p, inst.batch, inst.envs, inst.features, inst.mask, trial.weights).total;
    };

    ModelParams probe = inst.params;
    auto probe_views = tensors(probe);
    const auto analytic_views = tensors(std::as_const(analytic));
    for (std::size_t k = 0; k < probe_views.size(); ++k) {
      auto& view = probe_views[k];
      auto [it, inserted] = per_tensor.try_emplace(view.name, TensorError{view.name});
      if (inserted) order.push_back(view.name);
      TensorError& err = it->second;
      for (std::size_t i = 0; i < view.values.size(); ++i) {
        const double saved = view.values[i];
        view.values[i] = saved + options.step;
        const double up = objective(probe);
        view.values[i] = saved - options.step;
        const double down = objective(probe);
        view.values[i] = saved;
        const double numeric = (up - down) / (2.0 * options.step);
        const double a = analytic_views[k].values[i];
        const double rel = relative_error(a, numeric, options.denominator_floor);
        err.max_rel_err = std::max(err.max_rel_err, rel);
        err.max_abs_err = std::max(err.max_abs_err, std::abs(a - numeric));
        ++err.n_checked;
        ++report.n_coordinates;
        report.max_rel_err = std::max(report.max_rel_err, rel);
      }
    }
    ++report.n_trials;
  }
  for (const auto& name : order) report.tensors.push_back(per_tensor.at(name));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string report_to_json(const GradCheckReport& report, double tolerance) {
  nlohmann::json j;
  j["max_rel_err"] = report.max_rel_err;
  j["tolerance"] = tolerance;
  j["passed"] = report.max_rel_err <= tolerance;
  j["n_trials"] = report.n_trials;
  j["n_coordinates"] = report.n_coordinates;
  j["seconds"] = report.seconds;
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : report.tensors) {
    j["tensors"].push_back(
        {{"tensor", t.tensor}, {"max_rel_err", t.max_rel_err}, {"max_abs_err", t.max_abs_err}, {"n_checked", t.n_checked}});
  }
  return j.dump(2);
}

}  // namespace milk
