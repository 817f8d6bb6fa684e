#include <milk/eval.hpp>

#include <milk/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace milk {

Matrix infer_new_item_scores(const ModelParams& params, const ModalityFeatureBank& features,
                             std::span<const UserId> users, std::span<const ItemId> candidates) {
  for (UserId u : users) {
    if (u >= params.n_users()) throw DimensionError("user " + std::to_string(u) + " has no embedding");
  }
  const ModalityRepresentations reps = compute_representations(params, features, candidates);
  Matrix z = reps.rows[0];
  for (std::size_t m = 1; m < reps.n_modalities(); ++m) z += reps.rows[m];
  z /= static_cast<double>(reps.n_modalities());

  Matrix u(static_cast<Eigen::Index>(users.size()), static_cast<Eigen::Index>(params.dim()));
  for (std::size_t r = 0; r < users.size(); ++r) u.row(static_cast<Eigen::Index>(r)) = params.user_embeddings.row(users[r]);
  return u * z.transpose();
}

std::vector<ItemId> rank_candidates(std::span<const double> scores, std::span<const ItemId> candidates) {
  if (scores.size() != candidates.size()) throw DimensionError("one score per candidate");
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  std::vector<ItemId> ranking;
  ranking.reserve(order.size());
  for (auto i : order) ranking.push_back(candidates[i]);
  return ranking;
}

double recall_at_k(std::span<const ItemId> ranking, std::span<const ItemId> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  const std::size_t depth = std::min(k, ranking.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < depth; ++r) {
    hits += std::binary_search(relevant.begin(), relevant.end(), ranking[r]) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(std::span<const ItemId> ranking, std::span<const ItemId> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  const std::size_t depth = std::min(k, ranking.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), ranking[r])) dcg += 1.0 / std::log2(double(r) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) ideal += 1.0 / std::log2(double(r) + 2.0);
  return dcg / ideal;
}

std::string_view to_string(MissingGroup group) {
  switch (group) {
    case MissingGroup::full: return "full";
    case MissingGroup::missing_one: return "missing_one";
    case MissingGroup::missing_two: return "missing_two";
  }
  return "?";
}

MissingGroup group_of(const AvailabilityMask& mask, ItemId item) {
  const std::size_t missing = mask.missing_count(item);
  if (missing == 0) return MissingGroup::full;
  if (missing == 1) return MissingGroup::missing_one;
  return MissingGroup::missing_two;
}

EvalTask make_eval_task(const DatasetBundle& bundle, Split split) {
  EvalTask task;
  task.candidates = bundle.items(split);
  for (ItemId j : task.candidates) task.groups[j] = group_of(bundle.test_mask, j);

  std::map<UserId, std::vector<ItemId>> by_user;
  for (const auto& p : bundle.pairs(split)) by_user[p.user].push_back(p.item);
  for (auto& [user, items] : by_user) {
    // No trained embedding for users without training interactions.
    if (bundle.train.positives(user).empty()) continue;
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    task.users.push_back(user);
    task.relevant.push_back(std::move(items));
  }
  return task;
}

std::vector<UserMetrics> evaluate_users(const Matrix& scores, const EvalTask& task, std::span<const std::size_t> ks,
                                        bool group_breakdown) {
  if (static_cast<std::size_t>(scores.rows()) != task.users.size() ||
      static_cast<std::size_t>(scores.cols()) != task.candidates.size()) {
    throw DimensionError("score matrix does not match the evaluation task");
  }
  std::vector<UserMetrics> out;
  out.reserve(task.users.size());
  std::vector<double> row(task.candidates.size());
  for (std::size_t r = 0; r < task.users.size(); ++r) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    const std::vector<ItemId> ranking = rank_candidates(row, task.candidates);
    const auto& relevant = task.relevant[r];

    UserMetrics um;
    um.user = task.users[r];
    um.n_relevant = relevant.size();
    for (auto k : ks) um.at_k[k] = {recall_at_k(ranking, relevant, k), ndcg_at_k(ranking, relevant, k)};
    if (group_breakdown) {
      for (auto g : kMissingGroups) {
        std::vector<ItemId> in_group;
        for (ItemId j : relevant) {
          auto it = task.groups.find(j);
          if (it != task.groups.end() && it->second == g) in_group.push_back(j);
        }
        if (in_group.empty()) continue;
        um.group_relevant[g] = in_group.size();
        auto& metrics = um.group_at_k[g];
        for (auto k : ks) metrics[k] = {recall_at_k(ranking, in_group, k), ndcg_at_k(ranking, in_group, k)};
      }
    }
    out.push_back(std::move(um));
  }
  return out;
}

MetricReport summarize(const std::vector<UserMetrics>& users, const EvalTask& task, std::span<const std::size_t> ks,
                       bool group_breakdown) {
  MetricReport report;
  report.n_users = users.size();
  for (auto k : ks) {
    KMetrics sum;
    for (const auto& u : users) {
      sum.recall += u.at_k.at(k).recall;
      sum.ndcg += u.at_k.at(k).ndcg;
    }
    if (!users.empty()) {
      sum.recall /= double(users.size());
      sum.ndcg /= double(users.size());
    }
    report.at_k[k] = sum;
  }
  if (!group_breakdown) return report;

  for (auto g : kMissingGroups) {
    GroupMetrics gm;
    for (const auto& [item, group] : task.groups) gm.n_items += group == g ? 1 : 0;
    for (auto k : ks) gm.at_k[k] = {};
    for (const auto& u : users) {
      auto it = u.group_at_k.find(g);
      if (it == u.group_at_k.end()) continue;
      ++gm.n_users;
      for (auto k : ks) {
        gm.at_k[k].recall += it->second.at(k).recall;
        gm.at_k[k].ndcg += it->second.at(k).ndcg;
      }
    }
    if (gm.n_users > 0) {
      for (auto& [k, metrics] : gm.at_k) {
        metrics.recall /= double(gm.n_users);
        metrics.ndcg /= double(gm.n_users);
      }
    }
    report.groups[std::string(to_string(g))] = gm;
  }
  return report;
}

MetricReport evaluate(const DatasetBundle& bundle, const ModelParams& params, const ModalityFeatureBank& features,
                      Split split, std::span<const std::size_t> ks, bool group_breakdown) {
  EvalTask task = make_eval_task(bundle, split);
  EvalTask known = task;
  known.users.clear();
  known.relevant.clear();
  for (std::size_t r = 0; r < task.users.size(); ++r) {
    if (task.users[r] >= params.n_users()) {
      std::cerr << "warning: user " << task.users[r] << " has no embedding; skipped\n";
      continue;
    }
    known.users.push_back(task.users[r]);
    known.relevant.push_back(task.relevant[r]);
  }
  if (known.users.empty()) throw DataError("no eligible users in the " + std::string(to_string(split)) + " split");

  const Matrix scores = infer_new_item_scores(params, features, known.users, known.candidates);
  MetricReport report = summarize(evaluate_users(scores, known, ks, group_breakdown), known, ks, group_breakdown);
  report.seed = bundle.seed;
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using json = nlohmann::json;

json at_k_json(const std::map<std::size_t, KMetrics>& at_k) {
  json j = json::object();
  for (const auto& [k, m] : at_k) j[std::to_string(k)] = {{"recall", m.recall}, {"ndcg", m.ndcg}};
  return j;
}

std::map<std::size_t, KMetrics> at_k_from_json(const json& j) {
  std::map<std::size_t, KMetrics> out;
  for (const auto& [key, value] : j.items()) {
    out[std::stoul(key)] = {value.at("recall").get<double>(), value.at("ndcg").get<double>()};
  }
  return out;
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
  json j;
  j["protocol"] = report.protocol;
  j["K"] = at_k_json(report.at_k);
  j["groups"] = json::object();
  for (const auto& [name, g] : report.groups) {
    j["groups"][name] = {{"K", at_k_json(g.at_k)}, {"n_users", g.n_users}, {"n_items", g.n_items}};
  }
  j["n_users"] = report.n_users;
  j["seed"] = report.seed;
  return j.dump(2);
}

MetricReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    MetricReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.at_k = at_k_from_json(j.at("K"));
    for (const auto& [name, g] : j.at("groups").items()) {
      r.groups[name] = {at_k_from_json(g.at("K")), g.at("n_users").get<std::size_t>(), g.at("n_items").get<std::size_t>()};
    }
    r.n_users = j.at("n_users").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid metric report: ") + e.what());
  }
}

std::string reports_to_csv(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "variant,scope,metric,k,value\n";
  for (const auto& [variant, report] : rows) {
    auto emit = [&](const std::string& scope, const std::map<std::size_t, KMetrics>& at_k) {
      for (const auto& [k, m] : at_k) {
        out << variant << ',' << scope << ",recall," << k << ',' << m.recall << '\n';
        out << variant << ',' << scope << ",ndcg," << k << ',' << m.ndcg << '\n';
      }
    };
    emit("all", report.at_k);
    for (const auto& [name, g] : report.groups) emit(name, g.at_k);
  }
  return out.str();
}

std::string comparison_table_csv(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "variant";
  if (rows.empty()) {
    out << '\n';
    return out.str();
  }
  const MetricReport& first = rows.front().second;
  std::vector<std::string> groups;
  for (const auto& [name, g] : first.groups) {
    if (g.n_items > 0) groups.push_back(name);
  }
  for (const auto& [k, m] : first.at_k) out << ",recall@" << k << ",ndcg@" << k;
  for (const auto& name : groups) {
    for (const auto& [k, m] : first.at_k) out << ',' << name << "_recall@" << k << ',' << name << "_ndcg@" << k;
  }
  out << '\n';
  for (const auto& [variant, report] : rows) {
    out << variant;
    for (const auto& [k, m] : first.at_k) {
      const KMetrics& v = report.at_k.at(k);
      out << ',' << v.recall << ',' << v.ndcg;
    }
    for (const auto& name : groups) {
      const GroupMetrics& g = report.groups.at(name);
      for (const auto& [k, m] : first.at_k) out << ',' << g.at_k.at(k).recall << ',' << g.at_k.at(k).ndcg;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace milk
