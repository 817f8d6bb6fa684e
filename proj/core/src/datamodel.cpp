#include <milk/datamodel.hpp>

#include <milk/error.hpp>
#include <milk/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace milk {

// ---------------------------------------------------------------------------
// InteractionSet

InteractionSet::InteractionSet(std::size_t n_users, std::size_t n_items, std::vector<Interaction> pairs)
    : n_users_(n_users), n_items_(n_items), pairs_(std::move(pairs)) {
  for (const auto& p : pairs_) {
    if (p.user >= n_users_ || p.item >= n_items_) {
      throw DataError("interaction (" + std::to_string(p.user) + ", " + std::to_string(p.item) +
                      ") outside [0, " + std::to_string(n_users_) + ") x [0, " + std::to_string(n_items_) + ")");
    }
  }
  std::sort(pairs_.begin(), pairs_.end());
  pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());

  offsets_.assign(n_users_ + 1, 0);
  for (const auto& p : pairs_) ++offsets_[p.user + 1];
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  items_.resize(pairs_.size());
  // pairs_ is sorted by (user, item), so items_ is per-user sorted.
  std::transform(pairs_.begin(), pairs_.end(), items_.begin(), [](const Interaction& p) { return p.item; });
}

std::span<const ItemId> InteractionSet::positives(UserId user) const {
  if (user >= n_users_) return {};
  return std::span<const ItemId>(items_).subspan(offsets_[user], offsets_[user + 1] - offsets_[user]);
}

bool InteractionSet::contains(UserId user, ItemId item) const {
  const auto pos = positives(user);
  return std::binary_search(pos.begin(), pos.end(), item);
}

InteractionSet InteractionSet::with_item_universe(std::size_t n_items) const {
  return InteractionSet(n_users_, n_items, pairs_);
}

// ---------------------------------------------------------------------------
// ModalityFeatureBank

ModalityFeatureBank::ModalityFeatureBank(std::vector<Matrix> matrices) : matrices_(std::move(matrices)) {
  if (matrices_.empty()) throw DimensionError("feature bank needs at least one modality");
  n_items_ = static_cast<std::size_t>(matrices_.front().rows());
  for (std::size_t m = 0; m < matrices_.size(); ++m) {
    if (static_cast<std::size_t>(matrices_[m].rows()) != n_items_) {
      throw DimensionError("modality " + std::to_string(m) + " has " + std::to_string(matrices_[m].rows()) +
                           " rows, expected " + std::to_string(n_items_));
    }
    if (matrices_[m].cols() == 0) throw DimensionError("modality " + std::to_string(m) + " has zero columns");
    if (!matrices_[m].allFinite()) throw DataError("modality " + std::to_string(m) + " contains NaN or Inf");
  }
}

std::vector<std::size_t> ModalityFeatureBank::dims() const {
  std::vector<std::size_t> out;
  for (const auto& mat : matrices_) out.push_back(static_cast<std::size_t>(mat.cols()));
  return out;
}

void ModalityFeatureBank::set_row(std::size_t m, ItemId item, const Eigen::Ref<const Vector>& values) {
  if (static_cast<std::size_t>(values.size()) != dim(m)) throw DimensionError("row length mismatch");
  if (!values.allFinite()) throw DataError("non-finite feature value");
  matrices_[m].row(item) = values.transpose();
}

// ---------------------------------------------------------------------------
// AvailabilityMask

AvailabilityMask::AvailabilityMask(std::size_t n_items, std::size_t n_modalities)
    : n_items_(n_items), n_modalities_(n_modalities), entries_(n_items * n_modalities, 1) {}

AvailabilityMask::AvailabilityMask(std::size_t n_items, std::size_t n_modalities, std::vector<std::uint8_t> entries)
    : n_items_(n_items), n_modalities_(n_modalities), entries_(std::move(entries)) {
  if (entries_.size() != n_items_ * n_modalities_) throw DimensionError("mask entry count mismatch");
  for (std::size_t j = 0; j < n_items_; ++j) {
    std::size_t available = 0;
    for (std::size_t m = 0; m < n_modalities_; ++m) {
      const auto v = entries_[j * n_modalities_ + m];
      if (v > 1) throw DataError("mask entry for item " + std::to_string(j) + " is not 0/1");
      available += v;
    }
    if (available == 0) throw DataError("item " + std::to_string(j) + " has no available modality");
  }
}

std::size_t AvailabilityMask::available_count(ItemId item) const {
  std::size_t n = 0;
  for (std::size_t m = 0; m < n_modalities_; ++m) n += entries_[item * n_modalities_ + m];
  return n;
}

void AvailabilityMask::set_missing(ItemId item, std::size_t m) {
  if (!available(item, m)) return;
  if (available_count(item) == 1) {
    throw ProtocolError("removing modality " + std::to_string(m) + " would leave item " + std::to_string(item) +
                        " with no modality");
  }
  entries_[item * n_modalities_ + m] = 0;
}

void AvailabilityMask::copy_row_from(const AvailabilityMask& other, ItemId item) {
  for (std::size_t m = 0; m < n_modalities_; ++m) {
    entries_[item * n_modalities_ + m] = other.entries_[item * n_modalities_ + m];
  }
}

// ---------------------------------------------------------------------------
// Names

std::string_view to_string(Split split) { return split == Split::val ? "val" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(MissingnessProtocol protocol) {
  switch (protocol) {
    case MissingnessProtocol::ftft: return "FTFT";
    case MissingnessProtocol::ftmt: return "FTMT";
    case MissingnessProtocol::mtmt: return "MTMT";
    case MissingnessProtocol::custom: return "custom";
  }
  return "?";
}

MissingnessProtocol parse_protocol(std::string_view name) {
  if (name == "FTFT" || name == "ftft") return MissingnessProtocol::ftft;
  if (name == "FTMT" || name == "ftmt") return MissingnessProtocol::ftmt;
  if (name == "MTMT" || name == "mtmt") return MissingnessProtocol::mtmt;
  if (name == "custom") return MissingnessProtocol::custom;
  throw ConfigError("unknown protocol '" + std::string(name) + "'");
}

std::string_view to_string(ImputeStrategy strategy) {
  switch (strategy) {
    case ImputeStrategy::zero: return "zero";
    case ImputeStrategy::mean: return "mean";
    case ImputeStrategy::map: return "map";
  }
  return "?";
}

ImputeStrategy parse_impute_strategy(std::string_view name) {
  if (name == "zero") return ImputeStrategy::zero;
  if (name == "mean") return ImputeStrategy::mean;
  if (name == "map") return ImputeStrategy::map;
  throw ConfigError("unknown imputation strategy '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Splitting

AvailabilityMask DatasetBundle::effective_mask() const {
  AvailabilityMask out = train_mask;
  for (ItemId j : val_items) out.copy_row_from(test_mask, j);
  for (ItemId j : test_items) out.copy_row_from(test_mask, j);
  return out;
}

DatasetBundle assemble_bundle(const InteractionSet& interactions, ModalityFeatureBank features,
                              std::vector<ItemId> val_items, std::vector<ItemId> test_items, std::uint64_t seed,
                              double new_ratio) {
  const std::size_t n_items = features.n_items();
  if (interactions.n_items() > n_items) {
    throw DimensionError("interactions reference " + std::to_string(interactions.n_items()) +
                         " items but features have " + std::to_string(n_items) + " rows");
  }
  std::sort(val_items.begin(), val_items.end());
  std::sort(test_items.begin(), test_items.end());

  // 0 = warm, 1 = val, 2 = test
  std::vector<std::uint8_t> role(n_items, 0);
  for (ItemId j : val_items) {
    if (j >= n_items || role[j] != 0) throw SplitError("invalid or duplicate val item " + std::to_string(j));
    role[j] = 1;
  }
  for (ItemId j : test_items) {
    if (j >= n_items || role[j] != 0) throw SplitError("invalid or overlapping test item " + std::to_string(j));
    role[j] = 2;
  }

  DatasetBundle bundle;
  for (ItemId j = 0; j < n_items; ++j) {
    if (role[j] == 0) bundle.warm_items.push_back(j);
  }
  std::vector<Interaction> train_pairs;
  for (const auto& p : interactions.pairs()) {
    switch (role[p.item]) {
      case 0: train_pairs.push_back(p); break;
      case 1: bundle.val_pairs.push_back(p); break;
      default: bundle.test_pairs.push_back(p); break;
    }
  }
  bundle.train = InteractionSet(interactions.n_users(), n_items, std::move(train_pairs));
  bundle.val_items = std::move(val_items);
  bundle.test_items = std::move(test_items);
  bundle.train_mask = AvailabilityMask(n_items, features.n_modalities());
  bundle.test_mask = AvailabilityMask(n_items, features.n_modalities());
  bundle.features = std::move(features);
  bundle.seed = seed;
  bundle.new_ratio = new_ratio;
  return bundle;
}

DatasetBundle make_new_item_split(const InteractionSet& interactions, ModalityFeatureBank features, double new_ratio,
                                  std::uint64_t seed) {
  if (!(new_ratio > 0.0 && new_ratio < 1.0)) throw SplitError("new_ratio must lie in (0, 1)");
  const std::size_t n_items = features.n_items();
  const auto n_new = static_cast<std::size_t>(std::floor(new_ratio * static_cast<double>(n_items)));
  if (n_new < 2) {
    throw SplitError("new_ratio " + std::to_string(new_ratio) + " over " + std::to_string(n_items) +
                     " items yields fewer than 2 new items");
  }
  std::vector<ItemId> order(n_items);
  std::iota(order.begin(), order.end(), ItemId{0});
  Rng rng(seed);
  rng.shuffle(std::span<ItemId>(order));

  const std::size_t n_val = n_new / 2;
  std::vector<ItemId> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<ItemId> test(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                           order.begin() + static_cast<std::ptrdiff_t>(n_new));
  return assemble_bundle(interactions, std::move(features), std::move(val), std::move(test), seed, new_ratio);
}

// ---------------------------------------------------------------------------
// Missingness

MissingnessParams protocol_params(MissingnessProtocol protocol, const MissingnessParams& custom) {
  switch (protocol) {
    case MissingnessProtocol::ftft: return {0.0, 0.0, 1};
    case MissingnessProtocol::ftmt: return {0.0, 0.5, 1};
    case MissingnessProtocol::mtmt: return {0.3, 0.5, 1};
    case MissingnessProtocol::custom: return custom;
  }
  return custom;
}

namespace {

void drop_modalities(AvailabilityMask& mask, const std::vector<ItemId>& pool, double ratio, std::size_t max_missing,
                     Rng& rng) {
  if (pool.empty() || ratio == 0.0) return;
  const std::size_t n_modalities = mask.n_modalities();
  const auto n_affected = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(pool.size())));

  std::vector<ItemId> order = pool;
  rng.shuffle(std::span<ItemId>(order));

  // Even split of the affected items over 1..max_missing dropped
  // modalities; any remainder goes to the smaller counts.
  const std::size_t base = n_affected / max_missing;
  const std::size_t extra = n_affected % max_missing;
  std::size_t cursor = 0;
  std::vector<std::size_t> modalities(n_modalities);
  for (std::size_t count = 1; count <= max_missing; ++count) {
    const std::size_t group_size = base + (count - 1 < extra ? 1 : 0);
    for (std::size_t g = 0; g < group_size; ++g, ++cursor) {
      const ItemId item = order[cursor];
      std::iota(modalities.begin(), modalities.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(modalities));
      for (std::size_t r = 0; r < count; ++r) mask.set_missing(item, modalities[r]);
    }
  }
}

}  // namespace

MaskPair apply_missingness(const DatasetBundle& bundle, MissingnessProtocol protocol,
                           const MissingnessParams& custom, std::uint64_t seed) {
  const MissingnessParams params = protocol_params(protocol, custom);
  const std::size_t n_modalities = bundle.features.n_modalities();
  auto valid_ratio = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!valid_ratio(params.train_missing_ratio) || !valid_ratio(params.test_missing_ratio)) {
    throw ProtocolError("missing ratios must lie in [0, 1]");
  }
  if (params.max_missing_per_item >= n_modalities) {
    throw ProtocolError("max_missing_per_item " + std::to_string(params.max_missing_per_item) +
                        " would strip all " + std::to_string(n_modalities) + " modalities");
  }
  if (params.max_missing_per_item == 0 && (params.train_missing_ratio > 0.0 || params.test_missing_ratio > 0.0)) {
    throw ProtocolError("max_missing_per_item must be >= 1 when a missing ratio is positive");
  }

  const std::size_t n_items = bundle.features.n_items();
  MaskPair out{AvailabilityMask(n_items, n_modalities), AvailabilityMask(n_items, n_modalities)};
  Rng rng(seed);
  Rng train_rng(rng.fork_seed());
  Rng val_rng(rng.fork_seed());
  Rng test_rng(rng.fork_seed());
  drop_modalities(out.train_mask, bundle.warm_items, params.train_missing_ratio, params.max_missing_per_item,
                  train_rng);
  drop_modalities(out.test_mask, bundle.val_items, params.test_missing_ratio, params.max_missing_per_item, val_rng);
  drop_modalities(out.test_mask, bundle.test_items, params.test_missing_ratio, params.max_missing_per_item,
                  test_rng);
  return out;
}

// ---------------------------------------------------------------------------
// Imputation

CrossModalMaps::CrossModalMaps(std::size_t n_modalities)
    : n_modalities_(n_modalities), maps_(n_modalities * n_modalities) {}

const Matrix& CrossModalMaps::map(std::size_t source, std::size_t target) const {
  const auto& m = maps_.at(source * n_modalities_ + target);
  if (m.size() == 0) {
    throw ImputeError("no map fitted from modality " + std::to_string(source) + " to " + std::to_string(target));
  }
  return m;
}

void CrossModalMaps::set_map(std::size_t source, std::size_t target, Matrix weights) {
  maps_.at(source * n_modalities_ + target) = std::move(weights);
}

Matrix fit_linear_map(const ImputeReference& reference, std::size_t source, std::size_t target) {
  const auto& features = reference.features;
  const std::size_t d_src = features.dim(source);
  const std::size_t d_tgt = features.dim(target);

  std::vector<ItemId> paired;
  for (ItemId j : reference.items) {
    if (reference.mask.available(j, source) && reference.mask.available(j, target)) paired.push_back(j);
  }
  if (paired.size() < d_src) {
    throw FitError("map " + std::to_string(source) + "->" + std::to_string(target) + " needs >= " +
                   std::to_string(d_src) + " paired items, found " + std::to_string(paired.size()));
  }

  Matrix xtx = Matrix::Zero(static_cast<Eigen::Index>(d_src), static_cast<Eigen::Index>(d_src));
  Matrix xty = Matrix::Zero(static_cast<Eigen::Index>(d_src), static_cast<Eigen::Index>(d_tgt));
  for (ItemId j : paired) {
    const auto x = features.row(source, j);
    const auto y = features.row(target, j);
    xtx.noalias() += x.transpose() * x;
    xty.noalias() += x.transpose() * y;
  }
  xtx.diagonal().array() += kCrossModalRidge;
  // B^T = (X^T X + ridge I)^-1 X^T Y
  Matrix bt = xtx.ldlt().solve(xty);
  if (!bt.allFinite()) throw FitError("cross-modal map solve produced non-finite values");
  return bt.transpose();
}

CrossModalMaps fit_cross_modal_map(const ImputeReference& reference) {
  const std::size_t n_modalities = reference.features.n_modalities();
  CrossModalMaps maps(n_modalities);
  for (std::size_t s = 0; s < n_modalities; ++s) {
    for (std::size_t t = 0; t < n_modalities; ++t) {
      if (s != t) maps.set_map(s, t, fit_linear_map(reference, s, t));
    }
  }
  return maps;
}

namespace {

std::vector<Vector> reference_means(const ImputeReference& reference) {
  const auto& features = reference.features;
  std::vector<Vector> means;
  for (std::size_t m = 0; m < features.n_modalities(); ++m) {
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(features.dim(m)));
    std::size_t count = 0;
    for (ItemId j : reference.items) {
      if (!reference.mask.available(j, m)) continue;
      sum += features.row(m, j).transpose();
      ++count;
    }
    if (count == 0) throw ImputeError("no reference item has modality " + std::to_string(m) + " available");
    means.push_back(sum / static_cast<double>(count));
  }
  return means;
}

}  // namespace

ModalityFeatureBank impute(const ModalityFeatureBank& features, const AvailabilityMask& mask, ImputeStrategy strategy,
                           const ImputeReference& reference) {
  if (mask.n_items() != features.n_items() || mask.n_modalities() != features.n_modalities()) {
    throw DimensionError("mask shape does not match feature bank");
  }
  const std::size_t n_modalities = features.n_modalities();
  ModalityFeatureBank out = features;

  std::vector<Vector> means;
  CrossModalMaps maps;
  if (strategy == ImputeStrategy::mean) means = reference_means(reference);
  if (strategy == ImputeStrategy::map && n_modalities > 1) maps = fit_cross_modal_map(reference);

  for (ItemId j = 0; j < features.n_items(); ++j) {
    if (mask.available_count(j) == n_modalities) continue;
    std::size_t source = n_modalities;
    for (std::size_t m = 0; m < n_modalities; ++m) {
      if (mask.available(j, m)) {
        source = m;
        break;
      }
    }
    for (std::size_t m = 0; m < n_modalities; ++m) {
      if (mask.available(j, m)) continue;
      switch (strategy) {
        case ImputeStrategy::zero:
          out.set_row(m, j, Vector::Zero(static_cast<Eigen::Index>(features.dim(m))));
          break;
        case ImputeStrategy::mean:
          out.set_row(m, j, means[m]);
          break;
        case ImputeStrategy::map: {
          if (source == n_modalities) throw ImputeError("item " + std::to_string(j) + " has no source modality");
          const Vector x = features.row(source, j).transpose();
          out.set_row(m, j, maps.map(source, m) * x);
          break;
        }
      }
    }
  }
  return out;
}

ModalityFeatureBank impute_bundle_features(const DatasetBundle& bundle, ImputeStrategy strategy) {
  const ImputeReference reference{bundle.features, bundle.train_mask, bundle.warm_items};
  return impute(bundle.features, bundle.effective_mask(), strategy, reference);
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (k < 1) throw ConfigError("synthetic k must be >= 1");
  if (n_users < 1 || n_items < 1) throw ConfigError("synthetic n_users and n_items must be >= 1");
  if (interactions_per_user < 1) throw ConfigError("interactions_per_user must be >= 1");
  if (interactions_per_user > n_items) throw ConfigError("interactions_per_user exceeds n_items");
  if (n_modalities < 1 || dims.size() != n_modalities) throw ConfigError("dims must list one entry per modality");
  for (auto d : dims) {
    if (d < k) throw ConfigError("every modality dim must be >= k");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
  if (!modality_noise.empty() && modality_noise.size() != n_modalities) {
    throw ConfigError("modality_noise must list one entry per modality");
  }
  if (shared_projection && std::adjacent_find(dims.begin(), dims.end(), std::not_equal_to<>()) != dims.end()) {
    throw ConfigError("shared_projection requires equal dims");
  }
  if (!(gumbel_scale >= 0.0)) throw ConfigError("gumbel_scale must be >= 0");
  if (!(nuisance_std >= 0.0)) throw ConfigError("nuisance_std must be >= 0");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto k = static_cast<Eigen::Index>(spec.k);
  const auto n_items = static_cast<Eigen::Index>(spec.n_items);
  const auto n_users = static_cast<Eigen::Index>(spec.n_users);

  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = rng.normal(0.0, stddev);
    return out;
  };

  const Matrix item_latent = gaussian(n_items, k, 1.0);
  const Matrix user_latent = gaussian(n_users, k, 1.0);

  // Projections scaled so clean features have unit variance per column.
  std::vector<Matrix> projections;
  for (std::size_t m = 0; m < spec.n_modalities; ++m) {
    if (spec.shared_projection && m > 0) {
      projections.push_back(projections.front());
    } else {
      projections.push_back(gaussian(static_cast<Eigen::Index>(spec.dims[m]), k, 1.0 / std::sqrt(double(spec.k))));
    }
  }
  const auto n_nuisance = static_cast<Eigen::Index>(spec.nuisance_dim);
  Matrix nuisance;
  std::vector<Matrix> nuisance_projections;
  if (n_nuisance > 0) {
    nuisance = gaussian(n_items, n_nuisance, spec.nuisance_std);
    for (std::size_t m = 0; m < spec.n_modalities; ++m) {
      nuisance_projections.push_back(
          gaussian(static_cast<Eigen::Index>(spec.dims[m]), n_nuisance, 1.0 / std::sqrt(double(spec.nuisance_dim))));
    }
  }

  std::vector<Matrix> matrices;
  for (std::size_t m = 0; m < spec.n_modalities; ++m) {
    const double scale = spec.modality_noise.empty() ? 1.0 : spec.modality_noise[m];
    Matrix x = item_latent * projections[m].transpose();
    if (n_nuisance > 0) x += nuisance * nuisance_projections[m].transpose();
    const double stddev = spec.noise_std * scale;
    if (stddev > 0.0) x += gaussian(n_items, x.cols(), stddev);
    matrices.push_back(std::move(x));
  }

  std::vector<Interaction> pairs;
  pairs.reserve(spec.n_users * spec.interactions_per_user);
  std::vector<std::pair<double, ItemId>> scored(spec.n_items);
  const auto top = static_cast<std::ptrdiff_t>(spec.interactions_per_user);
  for (Eigen::Index u = 0; u < n_users; ++u) {
    const Vector scores = item_latent * user_latent.row(u).transpose();
    for (Eigen::Index j = 0; j < n_items; ++j) {
      scored[static_cast<std::size_t>(j)] = {scores[j] + spec.gumbel_scale * rng.gumbel(), static_cast<ItemId>(j)};
    }
    std::partial_sort(scored.begin(), scored.begin() + top, scored.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (std::ptrdiff_t r = 0; r < top; ++r) pairs.push_back({static_cast<UserId>(u), scored[r].second});
  }

  return {InteractionSet(spec.n_users, spec.n_items, std::move(pairs)), ModalityFeatureBank(std::move(matrices))};
}

}  // namespace milk
