#pragma once

#include <milk/types.hpp>

#include <cstddef>
#include <cstdint>
#include <compare>
#include <span>
#include <string_view>
#include <vector>

namespace milk {

struct Interaction {
  UserId user = 0;
  ItemId item = 0;

  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

/// Implicit user-item feedback with a per-user positive index.
///
/// Construction sorts and deduplicates the pairs; ids must already lie in
/// [0, n_users) x [0, n_items).
class InteractionSet {
 public:
  InteractionSet() = default;
  InteractionSet(std::size_t n_users, std::size_t n_items, std::vector<Interaction> pairs);

  std::size_t n_users() const noexcept { return n_users_; }
  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }

  const std::vector<Interaction>& pairs() const noexcept { return pairs_; }

  // Sorted positive items of a user.
  std::span<const ItemId> positives(UserId user) const;
  bool contains(UserId user, ItemId item) const;

  // Same pairs, larger item universe (feature rows may outnumber the items
  // that appear in the interaction log).
  InteractionSet with_item_universe(std::size_t n_items) const;

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<Interaction> pairs_;
  std::vector<std::size_t> offsets_;  // CSR offsets into items_, n_users + 1
  std::vector<ItemId> items_;
};

/// Dense per-modality item features, one matrix (n_items x dim_m) per modality.
class ModalityFeatureBank {
 public:
  ModalityFeatureBank() = default;
  explicit ModalityFeatureBank(std::vector<Matrix> matrices);

  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_modalities() const noexcept { return matrices_.size(); }
  std::size_t dim(std::size_t m) const { return static_cast<std::size_t>(matrices_.at(m).cols()); }
  std::vector<std::size_t> dims() const;

  const Matrix& matrix(std::size_t m) const { return matrices_.at(m); }
  auto row(std::size_t m, ItemId item) const { return matrices_[m].row(item); }

  // Replace a row; values must be finite.
  void set_row(std::size_t m, ItemId item, const Eigen::Ref<const Vector>& values);

 private:
  std::size_t n_items_ = 0;
  std::vector<Matrix> matrices_;
};

/// Binary item x modality availability. Every item keeps at least one
/// available modality; any operation that would strip the last one throws.
class AvailabilityMask {
 public:
  AvailabilityMask() = default;
  // All modalities available.
  AvailabilityMask(std::size_t n_items, std::size_t n_modalities);
  // Row-major entries; throws DataError on values other than 0/1 or empty rows.
  AvailabilityMask(std::size_t n_items, std::size_t n_modalities, std::vector<std::uint8_t> entries);

  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_modalities() const noexcept { return n_modalities_; }

  bool available(ItemId item, std::size_t m) const { return entries_[item * n_modalities_ + m] != 0; }
  std::size_t available_count(ItemId item) const;
  std::size_t missing_count(ItemId item) const { return n_modalities_ - available_count(item); }

  void set_missing(ItemId item, std::size_t m);
  void copy_row_from(const AvailabilityMask& other, ItemId item);

  const std::vector<std::uint8_t>& entries() const noexcept { return entries_; }

  friend bool operator==(const AvailabilityMask&, const AvailabilityMask&) = default;

 private:
  std::size_t n_items_ = 0;
  std::size_t n_modalities_ = 0;
  std::vector<std::uint8_t> entries_;
};

enum class Split { val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

/// Warm training interactions plus the held-out new-item pools.
struct DatasetBundle {
  InteractionSet train;
  std::vector<ItemId> warm_items;  // sorted
  std::vector<ItemId> val_items;   // sorted
  std::vector<ItemId> test_items;  // sorted
  std::vector<Interaction> val_pairs;
  std::vector<Interaction> test_pairs;
  ModalityFeatureBank features;
  AvailabilityMask train_mask;  // consulted for warm items
  AvailabilityMask test_mask;   // consulted for val and test items
  std::uint64_t seed = 0;
  double new_ratio = 0.0;

  const std::vector<ItemId>& items(Split split) const { return split == Split::val ? val_items : test_items; }
  const std::vector<Interaction>& pairs(Split split) const { return split == Split::val ? val_pairs : test_pairs; }

  // Per-item view: warm rows from train_mask, new-item rows from test_mask.
  AvailabilityMask effective_mask() const;
};

// Builds the bundle for an explicit choice of new items. Users whose every
// interaction touches a new item simply have no training pairs.
DatasetBundle assemble_bundle(const InteractionSet& interactions, ModalityFeatureBank features,
                              std::vector<ItemId> val_items, std::vector<ItemId> test_items,
                              std::uint64_t seed, double new_ratio);

// floor(new_ratio * n_items) uniformly chosen items become new items, split
// half/half into validation and test pools.
DatasetBundle make_new_item_split(const InteractionSet& interactions, ModalityFeatureBank features,
                                  double new_ratio, std::uint64_t seed);

enum class MissingnessProtocol { ftft, ftmt, mtmt, custom };

std::string_view to_string(MissingnessProtocol protocol);
MissingnessProtocol parse_protocol(std::string_view name);

struct MissingnessParams {
  double train_missing_ratio = 0.0;
  double test_missing_ratio = 0.5;
  std::size_t max_missing_per_item = 1;
};

// Parameters the named protocols imply; custom returns the input unchanged.
MissingnessParams protocol_params(MissingnessProtocol protocol, const MissingnessParams& custom = {});

struct MaskPair {
  AvailabilityMask train_mask;
  AvailabilityMask test_mask;
};

/// Simulates missing modalities.
///
/// round(ratio * n) items of each pool (warm, val, test) lose modalities. The
/// affected items are split evenly across 1..max_missing_per_item dropped
/// modalities, uniformly chosen without replacement.
MaskPair apply_missingness(const DatasetBundle& bundle, MissingnessProtocol protocol,
                           const MissingnessParams& params, std::uint64_t seed);

enum class ImputeStrategy { zero, mean, map };

std::string_view to_string(ImputeStrategy strategy);
ImputeStrategy parse_impute_strategy(std::string_view name);

// Statistics source for mean/map imputation: only `items` rows of `features`
// that `mask` marks available are ever read.
struct ImputeReference {
  const ModalityFeatureBank& features;
  const AvailabilityMask& mask;
  std::span<const ItemId> items;
};

/// Linear maps between ordered modality pairs, fitted by ridge-stabilized
/// least squares on items that have both modalities.
class CrossModalMaps {
 public:
  CrossModalMaps() = default;
  explicit CrossModalMaps(std::size_t n_modalities);

  // target_dim x source_dim.
  const Matrix& map(std::size_t source, std::size_t target) const;
  void set_map(std::size_t source, std::size_t target, Matrix weights);
  std::size_t n_modalities() const noexcept { return n_modalities_; }

 private:
  std::size_t n_modalities_ = 0;
  std::vector<Matrix> maps_;
};

inline constexpr double kCrossModalRidge = 1e-6;

// Minimises sum_j ||B x_j^source - x_j^target||^2 + ridge ||B||^2 over the
// reference items with both modalities available.
Matrix fit_linear_map(const ImputeReference& reference, std::size_t source, std::size_t target);

CrossModalMaps fit_cross_modal_map(const ImputeReference& reference);

ModalityFeatureBank impute(const ModalityFeatureBank& features, const AvailabilityMask& mask,
                           ImputeStrategy strategy, const ImputeReference& reference);

// Imputes the whole item universe of a bundle under its effective mask, with
// statistics taken from warm items under the training mask.
ModalityFeatureBank impute_bundle_features(const DatasetBundle& bundle, ImputeStrategy strategy);

struct SyntheticSpec {
  std::size_t n_users = 500;
  std::size_t n_items = 300;
  std::size_t k = 8;
  std::size_t n_modalities = 2;
  std::vector<std::size_t> dims{32, 32};
  double noise_std = 0.1;
  std::size_t interactions_per_user = 20;
  std::uint64_t seed = 0;
  // Optional per-modality multipliers on noise_std; empty means all ones.
  std::vector<double> modality_noise;
  // Projection shared by all modalities (requires equal dims).
  bool shared_projection = false;
  double gumbel_scale = 1.0;
  // Optional item-level nuisance factors shared by all modalities,
  // x^m = P^m z + Q^m s + noise with s ~ N(0, nuisance_std^2 I). They carry no
  // preference signal; 0 disables them.
  std::size_t nuisance_dim = 0;
  double nuisance_std = 1.0;

  void validate() const;
};

struct SyntheticData {
  InteractionSet interactions;
  ModalityFeatureBank features;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace milk
