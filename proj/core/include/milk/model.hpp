#pragma once

#include <milk/datamodel.hpp>
#include <milk/types.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace milk {

inline constexpr std::size_t kDefaultRepresentationDim = 64;
inline constexpr double kInitStd = 0.01;

/// User embedding table plus one affine extractor per modality,
/// c^m = W^m x^m + b^m, all mapping into a shared d-dimensional space.
struct ModelParams {
  Matrix user_embeddings;        // n_users x d
  std::vector<Matrix> weights;   // per modality, d x dim_m
  std::vector<Vector> biases;    // per modality, d

  std::size_t n_users() const noexcept { return static_cast<std::size_t>(user_embeddings.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(user_embeddings.cols()); }
  std::size_t n_modalities() const noexcept { return weights.size(); }
  std::vector<std::size_t> feature_dims() const;

  bool all_finite() const;
  void set_zero();

  static ModelParams zeros_like(const ModelParams& other);
};

// Named flat view of one parameter tensor.
template <typename T>
struct TensorView {
  std::string name;
  std::span<T> values;
};

// Fixed order: users, then W/b per modality.
std::vector<TensorView<double>> tensors(ModelParams& params);
std::vector<TensorView<const double>> tensors(const ModelParams& params);

// Gaussian(0, kInitStd^2) entries, zero biases.
ModelParams init_params(std::size_t n_users, std::span<const std::size_t> dims, std::size_t d,
                        std::uint64_t seed, double init_std = kInitStd);

void check_dimensions(const ModelParams& params, const ModelParams& other);

Vector extract(const ModelParams& params, std::size_t m, const Eigen::Ref<const Vector>& x);

/// Extractor outputs of a batch of items: rows[m] is (n_items x d), row r
/// belongs to items[r].
struct ModalityRepresentations {
  std::vector<ItemId> items;
  std::vector<Matrix> rows;

  std::size_t n_items() const noexcept { return items.size(); }
  std::size_t n_modalities() const noexcept { return rows.size(); }
};

ModalityRepresentations compute_representations(const ModelParams& params,
                                                const ModalityFeatureBank& features,
                                                std::span<const ItemId> items);

/// Mean over (item, modality pair) terms of ||c^m - c^m'||^2, counting only
/// pairs where the mask marks both modalities available; 0 if none are.
double alignment_loss(const ModalityRepresentations& reps, const AvailabilityMask& mask);

// Throws ContractError unless weights are non-negative and sum to 1 within 1e-9.
void check_simplex(std::span<const double> weights);

Vector fuse(std::span<const Vector> reps, std::span<const double> weights);
Vector fuse(const ModalityRepresentations& reps, std::size_t row, std::span<const double> weights);

double predict(const Eigen::Ref<const Vector>& user, const Eigen::Ref<const Vector>& item);

// File layout: magic "MCKP0001"; u32 LE n_users, d, M, then M u32 dims;
// then the user table, then W^m and b^m per modality, as float32 LE row-major.
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace milk
