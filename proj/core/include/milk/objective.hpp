#pragma once

#include <milk/datamodel.hpp>
#include <milk/environments.hpp>
#include <milk/model.hpp>
#include <milk/rng.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace milk {

struct Triple {
  UserId user = 0;
  ItemId pos = 0;
  ItemId neg = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

using TripleBatch = std::vector<Triple>;

inline constexpr std::size_t kNegativeRetries = 100;

/// Draws (user, positive, negative) triples: a uniformly chosen training pair
/// supplies user and positive, the negative is a uniformly chosen warm item
/// the user has not interacted with.
class TripleSampler {
 public:
  TripleSampler(const InteractionSet& train, std::vector<ItemId> candidate_items);

  TripleBatch sample(std::size_t batch_size, Rng& rng) const;

 private:
  const InteractionSet* train_;
  std::vector<ItemId> candidates_;
};

TripleBatch sample_triples(const InteractionSet& train, std::span<const ItemId> warm_items,
                           std::size_t batch_size, Rng& rng);

// Coefficients of the training objective
// mean_e L_e + beta Var_e L_e + lambda L_align + gamma_reg ||Phi_batch||^2.
struct ObjectiveWeights {
  double beta = 0.0;
  double lambda = 0.0;
  double gamma_reg = 0.0;
};

struct LossBreakdown {
  std::vector<double> env_losses;
  double mean_env_loss = 0.0;
  double env_variance = 0.0;  // population variance
  double env_spread = 0.0;    // max - min
  double align_loss = 0.0;
  double reg_loss = 0.0;      // squared norm, before gamma_reg
  double total = 0.0;
};

// log(1 + exp(x)) without overflow.
double softplus(double x);

double env_bpr_loss(const ModelParams& params, const TripleBatch& batch, const ModalityFeatureBank& features,
                    const EnvironmentWeights& env);

// mean(L) + beta * population variance(L).
double invariant_loss(std::span<const double> env_losses, double beta);

// d(invariant_loss)/dL_e = 1/E + 2 beta (L_e - mean) / E.
std::vector<double> invariant_loss_weights(std::span<const double> env_losses, double beta);

LossBreakdown total_loss(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                         const ModalityFeatureBank& features, const AvailabilityMask& mask,
                         const ObjectiveWeights& weights);

struct LossAndGradient {
  LossBreakdown loss;
  ModelParams gradient;
};

/// Loss together with its exact gradient. User rows outside the batch get a
/// zero gradient.
LossAndGradient loss_and_gradient(const ModelParams& params, const TripleBatch& batch,
                                  const EnvironmentSet& envs, const ModalityFeatureBank& features,
                                  const AvailabilityMask& mask, const ObjectiveWeights& weights);

ModelParams backward(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                     const ModalityFeatureBank& features, const AvailabilityMask& mask,
                     const ObjectiveWeights& weights);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ModelParams& params);
};

// Bias-corrected Adam. Throws NumericalError, naming the tensor, on a
// non-finite gradient.
void adam_step(OptimizerState& state, ModelParams& params, const ModelParams& gradient, double lr,
               const AdamOptions& options = {});

}  // namespace milk
