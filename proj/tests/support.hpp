#pragma once

#include <milk/datamodel.hpp>
#include <milk/model.hpp>
#include <milk/rng.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

namespace milk::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

inline ModalityFeatureBank random_features(std::size_t n_items, std::vector<std::size_t> dims, Rng& rng) {
  std::vector<Matrix> mats;
  for (auto d : dims) mats.push_back(random_matrix(Eigen::Index(n_items), Eigen::Index(d), rng));
  return ModalityFeatureBank(std::move(mats));
}

// Small synthetic bundle with FTMT masks, the shape most tests want.
inline DatasetBundle small_bundle(std::uint64_t seed, std::size_t n_users = 60, std::size_t n_items = 40) {
  SyntheticSpec spec;
  spec.n_users = n_users;
  spec.n_items = n_items;
  spec.dims = {8, 8};
  spec.interactions_per_user = 6;
  spec.seed = seed;
  SyntheticData data = generate_synthetic(spec);
  DatasetBundle b = make_new_item_split(data.interactions, std::move(data.features), 0.2, seed);
  MaskPair masks = apply_missingness(b, MissingnessProtocol::ftmt, {}, seed);
  b.train_mask = masks.train_mask;
  b.test_mask = masks.test_mask;
  return b;
}

// Brute-force metrics written from the definitions, independent of eval.cpp.
inline std::vector<ItemId> brute_rank(const std::vector<double>& scores, const std::vector<ItemId>& items) {
  std::vector<ItemId> out;
  std::vector<bool> used(items.size(), false);
  for (std::size_t r = 0; r < items.size(); ++r) {
    std::size_t best = items.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (used[i]) continue;
      if (best == items.size() || scores[i] > scores[best] ||
          (scores[i] == scores[best] && items[i] < items[best]))
        best = i;
    }
    used[best] = true;
    out.push_back(items[best]);
  }
  return out;
}

inline double brute_recall(const std::vector<ItemId>& ranking, const std::vector<ItemId>& relevant, std::size_t k) {
  double hits = 0;
  for (std::size_t r = 0; r < ranking.size() && r < k; ++r)
    for (ItemId j : relevant)
      if (ranking[r] == j) hits += 1;
  return hits / double(relevant.size());
}

inline double brute_ndcg(const std::vector<ItemId>& ranking, const std::vector<ItemId>& relevant, std::size_t k) {
  double dcg = 0, idcg = 0;
  for (std::size_t r = 0; r < ranking.size() && r < k; ++r) {
    if (std::find(relevant.begin(), relevant.end(), ranking[r]) != relevant.end())
      dcg += 1.0 / std::log2(double(r) + 2.0);
  }
  for (std::size_t r = 0; r < relevant.size() && r < k; ++r) idcg += 1.0 / std::log2(double(r) + 2.0);
  return dcg / idcg;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("milk_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace milk::test
