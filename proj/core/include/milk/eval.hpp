#pragma once

#include <milk/datamodel.hpp>
#include <milk/model.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace milk {

/// score(i, j) = u_i . (1/M) sum_m extract(m, x_j^m) over already-imputed
/// features. Rows follow `users`, columns follow `candidates`.
Matrix infer_new_item_scores(const ModelParams& params, const ModalityFeatureBank& features,
                             std::span<const UserId> users, std::span<const ItemId> candidates);

// Candidate ids by descending score, ties by ascending id.
std::vector<ItemId> rank_candidates(std::span<const double> scores, std::span<const ItemId> candidates);

// `relevant` must be sorted. Both return 0 for an empty relevant set.
double recall_at_k(std::span<const ItemId> ranking, std::span<const ItemId> relevant, std::size_t k);
double ndcg_at_k(std::span<const ItemId> ranking, std::span<const ItemId> relevant, std::size_t k);

struct KMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
};

enum class MissingGroup { full = 0, missing_one = 1, missing_two = 2 };
inline constexpr std::array<MissingGroup, 3> kMissingGroups{MissingGroup::full, MissingGroup::missing_one,
                                                            MissingGroup::missing_two};

std::string_view to_string(MissingGroup group);
// Items missing two or more modalities fall in missing_two.
MissingGroup group_of(const AvailabilityMask& mask, ItemId item);

struct GroupMetrics {
  std::map<std::size_t, KMetrics> at_k;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
};

struct MetricReport {
  std::string protocol;
  std::map<std::size_t, KMetrics> at_k;
  std::map<std::string, GroupMetrics> groups;
  std::size_t n_users = 0;
  std::uint64_t seed = 0;
};

// Per-user detail behind a report. group_at_k and group_relevant are only
// filled for groups where the user has relevant items.
struct UserMetrics {
  UserId user = 0;
  std::size_t n_relevant = 0;
  std::map<std::size_t, KMetrics> at_k;
  std::map<MissingGroup, std::size_t> group_relevant;
  std::map<MissingGroup, std::map<std::size_t, KMetrics>> group_at_k;
};

/// What a split looks like to the evaluator: ranked pool, the users to rank
/// for, each user's sorted relevant items, and each candidate's group.
struct EvalTask {
  std::vector<ItemId> candidates;
  std::vector<UserId> users;
  std::vector<std::vector<ItemId>> relevant;
  std::map<ItemId, MissingGroup> groups;
};

// Eligible users have training interactions and at least one relevant item
// in the split. Built from the bundle only; never looks at scores.
EvalTask make_eval_task(const DatasetBundle& bundle, Split split);

std::vector<UserMetrics> evaluate_users(const Matrix& scores, const EvalTask& task,
                                        std::span<const std::size_t> ks, bool group_breakdown);

MetricReport summarize(const std::vector<UserMetrics>& users, const EvalTask& task,
                       std::span<const std::size_t> ks, bool group_breakdown);

inline constexpr std::array<std::size_t, 2> kDefaultKs{10, 20};

/// Ranks the split's new items for every eligible user. `features` must be
/// the imputed bank. Throws DataError when no user is eligible.
MetricReport evaluate(const DatasetBundle& bundle, const ModelParams& params, const ModalityFeatureBank& features,
                      Split split, std::span<const std::size_t> ks, bool group_breakdown);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);
// One row per (variant, metric): variant,scope,metric,k,value.
std::string reports_to_csv(const std::vector<std::pair<std::string, MetricReport>>& rows);

// Wide form, one row per report: variant, recall@K and ndcg@K for every K,
// then the same per item group that has items. Groups and Ks come from the
// first report.
std::string comparison_table_csv(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace milk
