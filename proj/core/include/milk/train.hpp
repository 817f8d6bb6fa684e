#pragma once

#include <milk/datamodel.hpp>
#include <milk/environments.hpp>
#include <milk/model.hpp>
#include <milk/objective.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace milk {

struct TrainConfig {
  double beta = 1000.0;
  double lambda = 0.05;
  double alpha = kDefaultDirichletAlpha;
  double gamma_reg = 1e-5;
  double lr = 1e-3;
  std::size_t dim = kDefaultRepresentationDim;
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::size_t eval_every = 1;
  // Steps per epoch; 0 means ceil(|train pairs| / batch_size).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 0;
  EnvVariant env_variant = EnvVariant::full;
  ImputeStrategy impute = ImputeStrategy::mean;
  double init_std = kInitStd;

  ObjectiveWeights objective() const { return {beta, lambda, gamma_reg}; }
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  // Averages over the epoch's steps; env_losses[e] averages environment e.
  LossBreakdown loss;
  std::optional<double> val_recall20;
  std::optional<double> val_ndcg20;
};

struct TrainResult {
  ModelParams params;  // best validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_recall20 = -1.0;
  bool early_stopped = false;
  bool diverged = false;
  std::string divergence_message;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training. Every step draws a triple batch and an environment
/// set, then applies one Adam update of the full objective. Validation
/// Recall@20 selects the returned parameters; training stops after
/// `patience` evaluations without improvement.
///
/// Divergence does not throw: the result carries the last good checkpoint
/// and `diverged` is set.
TrainResult train(const DatasetBundle& bundle, const TrainConfig& config, const EpochCallback& on_epoch = {});

// Same, but with the caller's imputed feature bank.
TrainResult train(const DatasetBundle& bundle, const ModalityFeatureBank& features, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

std::string to_json_line(const EpochRecord& record);

}  // namespace milk
