#pragma once

#include <milk/datamodel.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace milk {

// Interactions: `user<TAB>item` per LF-terminated line. Item ids are kept
// verbatim because they index feature rows; user ids are compacted to a
// dense range when the log skips ids.
struct LoadedInteractions {
  InteractionSet interactions;
  // original_user_ids[new_id] = id in the file; empty when ids were dense.
  std::vector<std::uint64_t> original_user_ids;
};

LoadedInteractions parse_interactions(std::istream& in);
InteractionSet load_interactions(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path, const InteractionSet& interactions);

enum class FeatureFormat { csv, binary };

FeatureFormat feature_format_from_path(const std::filesystem::path& path);

// Binary layout: magic "MFEA0001", u32 LE n_items, u32 LE dim, then
// n_items * dim float32 LE values, row-major.
Matrix parse_feature_matrix_binary(std::istream& in);
Matrix parse_feature_matrix_csv(std::istream& in);
Matrix load_feature_matrix(const std::filesystem::path& path, FeatureFormat format,
                           std::optional<std::size_t> expected_rows = std::nullopt);
ModalityFeatureBank load_features(const std::vector<std::filesystem::path>& paths, FeatureFormat format,
                                  std::optional<std::size_t> expected_rows = std::nullopt);
void write_feature_matrix_binary(const std::filesystem::path& path, const Matrix& matrix);
void write_feature_matrix_csv(const std::filesystem::path& path, const Matrix& matrix);

// n_items rows of M comma-separated 0/1 values.
AvailabilityMask parse_mask_csv(std::istream& in);
AvailabilityMask load_mask_csv(const std::filesystem::path& path);
void write_mask_csv(const std::filesystem::path& path, const AvailabilityMask& mask);

/// Everything needed to replay a split: the dataset files, the item pools
/// and the seeds that produced them.
struct SplitManifest {
  std::filesystem::path interactions;
  std::vector<std::filesystem::path> features;
  std::filesystem::path train_mask;
  std::filesystem::path test_mask;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::uint64_t seed = 0;
  double new_ratio = 0.0;
  std::string protocol;
  MissingnessParams missingness;
  std::vector<ItemId> warm_items;
  std::vector<ItemId> val_items;
  std::vector<ItemId> test_items;
};

std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const std::string& text);
void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest load_manifest(const std::filesystem::path& path);

// Relative paths in the manifest resolve against `base_dir`.
DatasetBundle replay_manifest(const SplitManifest& manifest, const std::filesystem::path& base_dir);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace milk
