#include <milk/train.hpp>

#include <milk/error.hpp>
#include <milk/eval.hpp>

#include <json.hpp>

#include <array>
#include <cmath>

namespace milk {

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(gamma_reg >= 0.0)) throw ConfigError("gamma_reg must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (env_variant == EnvVariant::equal_only && beta > 0.0) {
    throw ConfigError("a single equal-weight environment cannot carry a variance penalty (set beta = 0)");
  }
}

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& step) {
  if (acc.env_losses.size() < step.env_losses.size()) acc.env_losses.resize(step.env_losses.size(), 0.0);
  for (std::size_t e = 0; e < step.env_losses.size(); ++e) acc.env_losses[e] += step.env_losses[e];
  acc.mean_env_loss += step.mean_env_loss;
  acc.env_variance += step.env_variance;
  acc.env_spread += step.env_spread;
  acc.align_loss += step.align_loss;
  acc.reg_loss += step.reg_loss;
  acc.total += step.total;
}

void scale(LossBreakdown& acc, double factor) {
  for (double& l : acc.env_losses) l *= factor;
  acc.mean_env_loss *= factor;
  acc.env_variance *= factor;
  acc.env_spread *= factor;
  acc.align_loss *= factor;
  acc.reg_loss *= factor;
  acc.total *= factor;
}

}  // namespace

TrainResult train(const DatasetBundle& bundle, const TrainConfig& config, const EpochCallback& on_epoch) {
  return train(bundle, impute_bundle_features(bundle, config.impute), config, on_epoch);
}

TrainResult train(const DatasetBundle& bundle, const ModalityFeatureBank& features, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (bundle.train.empty()) throw DataError("no training interactions");
  const std::size_t n_modalities = features.n_modalities();

  Rng root(config.seed);
  const auto dims = features.dims();
  ModelParams params = init_params(bundle.train.n_users(), dims, config.dim, root.fork_seed(), config.init_std);
  Rng sample_rng(root.fork_seed());
  Rng env_rng(root.fork_seed());

  const TripleSampler sampler(bundle.train, bundle.warm_items);
  const AvailabilityMask mask = bundle.effective_mask();
  EnvironmentSchedule schedule(n_modalities, std::vector<double>(n_modalities, config.alpha), config.env_variant);
  OptimizerState optimizer = OptimizerState::for_params(params);
  const ObjectiveWeights weights = config.objective();

  const std::size_t steps = config.steps_per_epoch > 0
                                ? config.steps_per_epoch
                                : (bundle.train.size() + config.batch_size - 1) / config.batch_size;

  const EvalTask val_task = make_eval_task(bundle, Split::val);
  const bool can_validate = !val_task.users.empty();
  constexpr std::array<std::size_t, 1> kSelectionK{20};

  TrainResult result;
  result.params = params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    try {
      for (std::size_t s = 0; s < steps; ++s) {
        const TripleBatch batch = sampler.sample(config.batch_size, sample_rng);
        const EnvironmentSet& envs = schedule.next(env_rng);
        LossAndGradient lg = loss_and_gradient(params, batch, envs, features, mask, weights);
        if (!std::isfinite(lg.loss.total)) {
          throw NumericalError("total loss is not finite at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(s + 1));
        }
        adam_step(optimizer, params, lg.gradient, config.lr);
        if (!params.all_finite()) {
          throw NumericalError("parameters became non-finite at epoch " + std::to_string(epoch));
        }
        accumulate(record.loss, lg.loss);
      }
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.divergence_message = e.what();
      break;
    }
    scale(record.loss, 1.0 / static_cast<double>(steps));

    bool stop = false;
    if (can_validate && epoch % config.eval_every == 0) {
      const MetricReport val = evaluate(bundle, params, features, Split::val, kSelectionK, false);
      record.val_recall20 = val.at_k.at(20).recall;
      record.val_ndcg20 = val.at_k.at(20).ndcg;
      if (*record.val_recall20 > result.best_val_recall20) {
        result.best_val_recall20 = *record.val_recall20;
        result.best_epoch = epoch;
        result.params = params;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        result.early_stopped = true;
        stop = true;
      }
    } else if (!can_validate) {
      result.params = params;
      result.best_epoch = epoch;
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (stop) break;
  }
  return result;
}

std::string to_json_line(const EpochRecord& record) {
  nlohmann::json j;
  j["epoch"] = record.epoch;
  j["env_losses"] = record.loss.env_losses;
  j["mean_env_loss"] = record.loss.mean_env_loss;
  j["env_variance"] = record.loss.env_variance;
  j["env_spread"] = record.loss.env_spread;
  j["align_loss"] = record.loss.align_loss;
  j["reg_loss"] = record.loss.reg_loss;
  j["total"] = record.loss.total;
  j["val_recall@20"] = record.val_recall20 ? nlohmann::json(*record.val_recall20) : nlohmann::json(nullptr);
  j["val_ndcg@20"] = record.val_ndcg20 ? nlohmann::json(*record.val_ndcg20) : nlohmann::json(nullptr);
  return j.dump();
}

}  // namespace milk
