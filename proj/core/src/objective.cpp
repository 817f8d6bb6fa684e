#include <milk/objective.hpp>

#include <milk/error.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace milk {

// ---------------------------------------------------------------------------
// Triple sampling

TripleSampler::TripleSampler(const InteractionSet& train, std::vector<ItemId> candidate_items)
    : train_(&train), candidates_(std::move(candidate_items)) {
  std::sort(candidates_.begin(), candidates_.end());
  candidates_.erase(std::unique(candidates_.begin(), candidates_.end()), candidates_.end());
  if (candidates_.empty()) throw ContractError("negative sampling needs candidate items");
  if (train.empty()) throw ContractError("negative sampling needs training pairs");
}

TripleBatch TripleSampler::sample(std::size_t batch_size, Rng& rng) const {
  const auto& pairs = train_->pairs();
  const std::size_t n_candidates = candidates_.size();

  // A user is saturated when every candidate is one of their positives.
  std::unordered_map<UserId, bool> saturated;
  auto is_saturated = [&](UserId user) {
    auto it = saturated.find(user);
    if (it != saturated.end()) return it->second;
    const auto pos = train_->positives(user);
    std::size_t covered = 0;
    for (ItemId j : pos) covered += std::binary_search(candidates_.begin(), candidates_.end(), j) ? 1 : 0;
    return saturated[user] = covered >= n_candidates;
  };

  TripleBatch batch;
  batch.reserve(batch_size);
  std::size_t skipped = 0;
  while (batch.size() < batch_size) {
    const Interaction& p = pairs[rng.uniform_index(pairs.size())];
    if (is_saturated(p.user)) {
      if (++skipped > 100 * (batch_size + pairs.size())) throw ContractError("every user is positive on all items");
      continue;
    }
    ItemId neg = 0;
    bool found = false;
    for (std::size_t attempt = 0; attempt < kNegativeRetries && !found; ++attempt) {
      neg = candidates_[rng.uniform_index(n_candidates)];
      found = !train_->contains(p.user, neg);
    }
    if (!found) {
      const std::size_t start = rng.uniform_index(n_candidates);
      for (std::size_t k = 0; k < n_candidates; ++k) {
        neg = candidates_[(start + k) % n_candidates];
        if (!train_->contains(p.user, neg)) break;
      }
    }
    batch.push_back({p.user, p.item, neg});
  }
  return batch;
}

TripleBatch sample_triples(const InteractionSet& train, std::span<const ItemId> warm_items, std::size_t batch_size,
                           Rng& rng) {
  return TripleSampler(train, std::vector<ItemId>(warm_items.begin(), warm_items.end())).sample(batch_size, rng);
}

// ---------------------------------------------------------------------------
// Losses

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

namespace {

// sigma(-x) = 1 / (1 + e^x), evaluated without overflow.
double sigmoid_neg(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

void check_env_count(std::size_t n_envs, double beta) {
  if (n_envs == 0) throw ContractError("objective needs at least one environment");
  if (n_envs < 2 && beta > 0.0) throw ContractError("variance penalty needs >= 2 environments");
}

// Unique users/items of a batch and each triple's row in the item list.
struct BatchIndex {
  std::vector<ItemId> items;
  std::vector<UserId> users;
  std::vector<std::size_t> pos_row;
  std::vector<std::size_t> neg_row;
};

BatchIndex index_batch(const TripleBatch& batch) {
  BatchIndex idx;
  for (const auto& t : batch) {
    idx.items.push_back(t.pos);
    idx.items.push_back(t.neg);
    idx.users.push_back(t.user);
  }
  std::sort(idx.items.begin(), idx.items.end());
  idx.items.erase(std::unique(idx.items.begin(), idx.items.end()), idx.items.end());
  std::sort(idx.users.begin(), idx.users.end());
  idx.users.erase(std::unique(idx.users.begin(), idx.users.end()), idx.users.end());
  auto row_of = [&](ItemId j) {
    return static_cast<std::size_t>(std::lower_bound(idx.items.begin(), idx.items.end(), j) - idx.items.begin());
  };
  for (const auto& t : batch) {
    idx.pos_row.push_back(row_of(t.pos));
    idx.neg_row.push_back(row_of(t.neg));
  }
  return idx;
}

Matrix fused_rows(const ModalityRepresentations& reps, const EnvironmentWeights& env) {
  check_simplex(env.theta);
  if (env.theta.size() != reps.n_modalities()) throw DimensionError("one fusion weight per modality");
  Matrix z = env.theta[0] * reps.rows[0];
  for (std::size_t m = 1; m < env.theta.size(); ++m) z += env.theta[m] * reps.rows[m];
  return z;
}

void validate_batch(const ModelParams& params, const TripleBatch& batch, const ModalityFeatureBank& features) {
  if (batch.empty()) throw ContractError("empty triple batch");
  for (const auto& t : batch) {
    if (t.user >= params.n_users()) throw DimensionError("triple user outside the embedding table");
    if (t.pos >= features.n_items() || t.neg >= features.n_items()) throw DimensionError("triple item out of range");
  }
}

LossAndGradient evaluate_objective(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                                   const ModalityFeatureBank& features, const AvailabilityMask& mask,
                                   const ObjectiveWeights& weights, bool with_gradient) {
  validate_batch(params, batch, features);
  check_env_count(envs.size(), weights.beta);
  const std::size_t n_envs = envs.size();
  const std::size_t n_modalities = params.n_modalities();
  const auto n_triples = static_cast<double>(batch.size());

  const BatchIndex idx = index_batch(batch);
  const ModalityRepresentations reps = compute_representations(params, features, idx.items);

  std::vector<Matrix> fused;
  fused.reserve(n_envs);
  for (const auto& env : envs.envs) fused.push_back(fused_rows(reps, env));

  // margins[e][t] = u_i . (z^e_pos - z^e_neg)
  std::vector<std::vector<double>> margins(n_envs, std::vector<double>(batch.size()));
  LossAndGradient out;
  auto& loss = out.loss;
  loss.env_losses.assign(n_envs, 0.0);
  for (std::size_t e = 0; e < n_envs; ++e) {
    const Matrix& z = fused[e];
    double sum = 0.0;
    for (std::size_t t = 0; t < batch.size(); ++t) {
      const auto u = params.user_embeddings.row(batch[t].user);
      const double margin = u.dot(z.row(static_cast<Eigen::Index>(idx.pos_row[t])) -
                                  z.row(static_cast<Eigen::Index>(idx.neg_row[t])));
      margins[e][t] = margin;
      sum += softplus(-margin);
    }
    loss.env_losses[e] = sum / n_triples;
  }

  const double mean = std::accumulate(loss.env_losses.begin(), loss.env_losses.end(), 0.0) / double(n_envs);
  double var = 0.0;
  for (double l : loss.env_losses) var += (l - mean) * (l - mean);
  var /= double(n_envs);
  loss.mean_env_loss = mean;
  loss.env_variance = var;
  const auto [lo, hi] = std::minmax_element(loss.env_losses.begin(), loss.env_losses.end());
  loss.env_spread = *hi - *lo;

  // Alignment terms, one per (unique item, available modality pair).
  std::size_t align_terms = 0;
  double align_sum = 0.0;
  for (std::size_t r = 0; r < reps.n_items(); ++r) {
    const ItemId j = reps.items[r];
    for (std::size_t m = 0; m + 1 < n_modalities; ++m) {
      if (!mask.available(j, m)) continue;
      for (std::size_t m2 = m + 1; m2 < n_modalities; ++m2) {
        if (!mask.available(j, m2)) continue;
        const auto ri = static_cast<Eigen::Index>(r);
        align_sum += (reps.rows[m].row(ri) - reps.rows[m2].row(ri)).squaredNorm();
        ++align_terms;
      }
    }
  }
  loss.align_loss = align_terms == 0 ? 0.0 : align_sum / static_cast<double>(align_terms);

  double reg = 0.0;
  for (UserId u : idx.users) reg += params.user_embeddings.row(u).squaredNorm();
  for (std::size_t m = 0; m < n_modalities; ++m) reg += params.weights[m].squaredNorm() + params.biases[m].squaredNorm();
  loss.reg_loss = reg;

  loss.total = mean + weights.beta * var + weights.lambda * loss.align_loss + weights.gamma_reg * reg;
  if (!with_gradient) return out;

  // Backward.
  ModelParams& grad = out.gradient;
  grad = ModelParams::zeros_like(params);
  const std::vector<double> env_weight = invariant_loss_weights(loss.env_losses, weights.beta);
  const auto d = static_cast<Eigen::Index>(params.dim());
  const auto n_rows = static_cast<Eigen::Index>(idx.items.size());

  std::vector<Matrix> grad_reps(n_modalities, Matrix::Zero(n_rows, d));
  Matrix grad_z(n_rows, d);
  for (std::size_t e = 0; e < n_envs; ++e) {
    grad_z.setZero();
    const Matrix& z = fused[e];
    for (std::size_t t = 0; t < batch.size(); ++t) {
      const double g = -env_weight[e] * sigmoid_neg(margins[e][t]) / n_triples;
      const auto pr = static_cast<Eigen::Index>(idx.pos_row[t]);
      const auto nr = static_cast<Eigen::Index>(idx.neg_row[t]);
      const auto u = params.user_embeddings.row(batch[t].user);
      grad.user_embeddings.row(batch[t].user) += g * (z.row(pr) - z.row(nr));
      grad_z.row(pr) += g * u;
      grad_z.row(nr) -= g * u;
    }
    for (std::size_t m = 0; m < n_modalities; ++m) grad_reps[m] += envs[e].theta[m] * grad_z;
  }

  if (align_terms > 0 && weights.lambda != 0.0) {
    const double scale = 2.0 * weights.lambda / static_cast<double>(align_terms);
    for (std::size_t r = 0; r < reps.n_items(); ++r) {
      const ItemId j = reps.items[r];
      const auto ri = static_cast<Eigen::Index>(r);
      for (std::size_t m = 0; m + 1 < n_modalities; ++m) {
        if (!mask.available(j, m)) continue;
        for (std::size_t m2 = m + 1; m2 < n_modalities; ++m2) {
          if (!mask.available(j, m2)) continue;
          const auto diff = (reps.rows[m].row(ri) - reps.rows[m2].row(ri)).eval();
          grad_reps[m].row(ri) += scale * diff;
          grad_reps[m2].row(ri) -= scale * diff;
        }
      }
    }
  }

  for (std::size_t m = 0; m < n_modalities; ++m) {
    Matrix x(n_rows, static_cast<Eigen::Index>(features.dim(m)));
    for (Eigen::Index r = 0; r < n_rows; ++r) x.row(r) = features.row(m, idx.items[static_cast<std::size_t>(r)]);
    grad.weights[m].noalias() = grad_reps[m].transpose() * x;
    grad.biases[m] = grad_reps[m].colwise().sum().transpose();
  }

  if (weights.gamma_reg != 0.0) {
    const double s = 2.0 * weights.gamma_reg;
    for (UserId u : idx.users) grad.user_embeddings.row(u) += s * params.user_embeddings.row(u);
    for (std::size_t m = 0; m < n_modalities; ++m) {
      grad.weights[m] += s * params.weights[m];
      grad.biases[m] += s * params.biases[m];
    }
  }
  return out;
}

}  // namespace

double env_bpr_loss(const ModelParams& params, const TripleBatch& batch, const ModalityFeatureBank& features,
                    const EnvironmentWeights& env) {
  const EnvironmentSet single{{env}};
  const AvailabilityMask mask(features.n_items(), features.n_modalities());
  return evaluate_objective(params, batch, single, features, mask, {}, false).loss.env_losses.front();
}

double invariant_loss(std::span<const double> env_losses, double beta) {
  check_env_count(env_losses.size(), beta);
  const double n = static_cast<double>(env_losses.size());
  const double mean = std::accumulate(env_losses.begin(), env_losses.end(), 0.0) / n;
  double var = 0.0;
  for (double l : env_losses) var += (l - mean) * (l - mean);
  return mean + beta * (var / n);
}

std::vector<double> invariant_loss_weights(std::span<const double> env_losses, double beta) {
  check_env_count(env_losses.size(), beta);
  const double n = static_cast<double>(env_losses.size());
  const double mean = std::accumulate(env_losses.begin(), env_losses.end(), 0.0) / n;
  std::vector<double> w;
  for (double l : env_losses) w.push_back(1.0 / n + 2.0 * beta * (l - mean) / n);
  return w;
}

LossBreakdown total_loss(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                         const ModalityFeatureBank& features, const AvailabilityMask& mask,
                         const ObjectiveWeights& weights) {
  return evaluate_objective(params, batch, envs, features, mask, weights, false).loss;
}

LossAndGradient loss_and_gradient(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                                  const ModalityFeatureBank& features, const AvailabilityMask& mask,
                                  const ObjectiveWeights& weights) {
  return evaluate_objective(params, batch, envs, features, mask, weights, true);
}

ModelParams backward(const ModelParams& params, const TripleBatch& batch, const EnvironmentSet& envs,
                     const ModalityFeatureBank& features, const AvailabilityMask& mask,
                     const ObjectiveWeights& weights) {
  return loss_and_gradient(params, batch, envs, features, mask, weights).gradient;
}

// ---------------------------------------------------------------------------
// Adam

OptimizerState OptimizerState::for_params(const ModelParams& params) {
  return {ModelParams::zeros_like(params), ModelParams::zeros_like(params), 0};
}

void adam_step(OptimizerState& state, ModelParams& params, const ModelParams& gradient, double lr,
               const AdamOptions& options) {
  check_dimensions(params, gradient);
  check_dimensions(params, state.first_moment);
  check_dimensions(params, state.second_moment);
  for (const auto& t : tensors(gradient)) {
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (!std::isfinite(t.values[i])) {
        throw NumericalError("non-finite gradient in " + t.name + " at index " + std::to_string(i) + " (step " +
                             std::to_string(state.step + 1) + ")");
      }
    }
  }

  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, step);
  const double correction2 = 1.0 - std::pow(options.beta2, step);

  auto p = tensors(params);
  auto g = tensors(gradient);
  auto m1 = tensors(state.first_moment);
  auto m2 = tensors(state.second_moment);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const double gi = g[k].values[i];
      double& m = m1[k].values[i];
      double& v = m2[k].values[i];
      m = options.beta1 * m + (1.0 - options.beta1) * gi;
      v = options.beta2 * v + (1.0 - options.beta2) * gi * gi;
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      p[k].values[i] -= lr * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
  }
}

}  // namespace milk
