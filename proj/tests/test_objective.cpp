#include "support.hpp"

#include <milk/error.hpp>
#include <milk/gradcheck.hpp>
#include <milk/objective.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

using namespace milk;

namespace {

// Two items on one scalar feature, d = 1, so that the score margin of the
// triple (0, 0, 1) is exactly `delta`.
struct MarginFixture {
  ModelParams params;
  ModalityFeatureBank features;
  EnvironmentWeights env{0, {1.0}};
  TripleBatch batch{{0, 0, 1}};

  explicit MarginFixture(double delta) {
    params = init_params(1, std::vector<std::size_t>{1}, 1, 0);
    params.user_embeddings(0, 0) = 1.0;
    params.weights[0](0, 0) = 1.0;
    Matrix x(2, 1);
    x << delta, 0.0;
    features = ModalityFeatureBank(std::vector<Matrix>{x});
  }
};

struct Instance {
  ModelParams params;
  ModalityFeatureBank features;
  AvailabilityMask mask;
  TripleBatch batch;
  EnvironmentSet envs;
};

Instance random_instance(std::uint64_t seed, std::size_t n_modalities = 2, bool masked = true) {
  Rng rng(seed);
  const std::size_t n_users = 5, n_items = 8, d = 3;
  std::vector<std::size_t> dims;
  for (std::size_t m = 0; m < n_modalities; ++m) dims.push_back(4 + m);
  Instance in;
  in.params = init_params(n_users, dims, d, seed, 0.5);
  for (auto& b : in.params.biases) b = test::random_matrix(Eigen::Index(d), 1, rng, 0.3).col(0);
  in.features = test::random_features(n_items, dims, rng);
  std::vector<std::uint8_t> entries(n_items * n_modalities, 1);
  if (masked) {
    entries[1 * n_modalities + 0] = 0;
    entries[4 * n_modalities + 1] = 0;
  }
  in.mask = AvailabilityMask(n_items, n_modalities, entries);
  for (int t = 0; t < 10; ++t) {
    const auto u = UserId(rng.uniform_index(n_users - 1));  // last user never sampled
    const auto p = ItemId(rng.uniform_index(n_items));
    ItemId q = ItemId(rng.uniform_index(n_items));
    if (q == p) q = ItemId((p + 1) % n_items);
    in.batch.push_back({u, p, q});
  }
  const std::vector<double> alpha(n_modalities, 0.7);
  in.envs = build_environments(n_modalities, alpha, rng, EnvVariant::full);
  return in;
}

double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  double worst = 0;
  auto ta = tensors(a);
  auto tb = tensors(b);
  for (std::size_t t = 0; t < ta.size(); ++t)
    for (std::size_t i = 0; i < ta[t].values.size(); ++i)
      worst = std::max(worst, std::abs(ta[t].values[i] - tb[t].values[i]));
  return worst;
}

}  // namespace

TEST(Softplus, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(softplus(0.0), std::log(2.0));
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-9);
  EXPECT_GT(softplus(-700.0), 0.0);
  EXPECT_GE(softplus(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(softplus(-800.0)));
}

TEST(EnvBpr, ZeroMarginGivesLogTwo) {
  MarginFixture f(0.0);
  EXPECT_NEAR(env_bpr_loss(f.params, f.batch, f.features, f.env), 0.693147, 1e-6);
}

TEST(EnvBpr, UnitMargin) {
  MarginFixture f(1.0);
  EXPECT_NEAR(env_bpr_loss(f.params, f.batch, f.features, f.env), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(env_bpr_loss(f.params, f.batch, f.features, f.env), 0.313262, 1e-6);
}

TEST(EnvBpr, LargeMarginSaturatesWithoutOverflow) {
  MarginFixture f(50.0);
  const double l = env_bpr_loss(f.params, f.batch, f.features, f.env);
  EXPECT_LT(l, 1e-9);
  EXPECT_GE(l, 0.0);
  MarginFixture g(-1000.0);
  EXPECT_NEAR(env_bpr_loss(g.params, g.batch, g.features, g.env), 1000.0, 1e-9);
}

TEST(InvariantLoss, PopulationVariancePenalty) {
  const std::vector<double> l{1, 2, 3};
  EXPECT_NEAR(invariant_loss(l, 1.0), 2.0 + 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(invariant_loss(l, 0.0), 2.0, 1e-15);
  const std::vector<double> same{0.4, 0.4, 0.4};
  EXPECT_DOUBLE_EQ(invariant_loss(same, 1000.0), 0.4);
  const std::vector<double> one{0.4};
  EXPECT_THROW(invariant_loss(one, 1.0), ContractError);
  EXPECT_DOUBLE_EQ(invariant_loss(one, 0.0), 0.4);
}

TEST(InvariantLoss, WeightsAreItsDerivative) {
  const std::vector<double> l{0.3, 0.9, 0.5, 0.1};
  const double beta = 7.0, h = 1e-6;
  const auto w = invariant_loss_weights(l, beta);
  for (std::size_t e = 0; e < l.size(); ++e) {
    auto up = l, down = l;
    up[e] += h;
    down[e] -= h;
    EXPECT_NEAR(w[e], (invariant_loss(up, beta) - invariant_loss(down, beta)) / (2 * h), 1e-7);
  }
}

TEST(TotalLoss, DecomposesIntoParts) {
  Instance in = random_instance(3);
  const ObjectiveWeights w{50.0, 0.3, 0.01};
  const LossBreakdown lb = total_loss(in.params, in.batch, in.envs, in.features, in.mask, w);
  EXPECT_NEAR(lb.total, lb.mean_env_loss + w.beta * lb.env_variance + w.lambda * lb.align_loss + w.gamma_reg * lb.reg_loss,
              1e-9);
  ASSERT_EQ(lb.env_losses.size(), 3u);
  double mean = 0;
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_NEAR(lb.env_losses[e], env_bpr_loss(in.params, in.batch, in.features, in.envs[e]), 1e-12);
    mean += lb.env_losses[e] / 3;
  }
  EXPECT_NEAR(lb.mean_env_loss, mean, 1e-12);
  const auto [lo, hi] = std::minmax_element(lb.env_losses.begin(), lb.env_losses.end());
  EXPECT_NEAR(lb.env_spread, *hi - *lo, 1e-15);
}

TEST(TotalLoss, RegularizerCoversBatchUsersAndExtractors) {
  Instance in = random_instance(4);
  const LossBreakdown lb = total_loss(in.params, in.batch, in.envs, in.features, in.mask, {0, 0, 1.0});
  std::map<UserId, bool> users;
  for (const auto& t : in.batch) users[t.user] = true;
  double reg = 0;
  for (const auto& [u, _] : users) reg += in.params.user_embeddings.row(u).squaredNorm();
  for (std::size_t m = 0; m < 2; ++m) reg += in.params.weights[m].squaredNorm() + in.params.biases[m].squaredNorm();
  EXPECT_NEAR(lb.reg_loss, reg, 1e-12);
}

TEST(TotalLoss, ReducesToMeanEnvLoss) {
  Instance in = random_instance(5);
  const LossBreakdown lb = total_loss(in.params, in.batch, in.envs, in.features, in.mask, {0, 0, 0});
  EXPECT_DOUBLE_EQ(lb.total, lb.mean_env_loss);
}

TEST(TotalLoss, IdenticalModalitiesHaveNoAlignmentCost) {
  Instance in = random_instance(6, 2, false);
  Rng rng(1);
  Matrix x = test::random_matrix(8, 4, rng);
  in.features = ModalityFeatureBank(std::vector<Matrix>{x, x});
  in.params.weights[1] = in.params.weights[0];
  in.params.biases[1] = in.params.biases[0];
  const LossBreakdown lb = total_loss(in.params, in.batch, in.envs, in.features, in.mask, {0, 5.0, 0});
  EXPECT_DOUBLE_EQ(lb.align_loss, 0.0);
  EXPECT_DOUBLE_EQ(lb.total, lb.mean_env_loss);
}

TEST(Backward, SingleOneHotEnvironmentIsPlainBpr) {
  Instance in = random_instance(7, 2, false);
  EnvironmentSet one{{{0, {1.0, 0.0}}}};
  const ModelParams g = backward(in.params, in.batch, one, in.features, in.mask, {0, 0, 0});

  ModelParams expect = ModelParams::zeros_like(in.params);
  const double n = double(in.batch.size());
  for (const auto& t : in.batch) {
    const Vector zp = in.params.weights[0] * in.features.matrix(0).row(t.pos).transpose() + in.params.biases[0];
    const Vector zn = in.params.weights[0] * in.features.matrix(0).row(t.neg).transpose() + in.params.biases[0];
    const Vector u = in.params.user_embeddings.row(t.user).transpose();
    const double delta = u.dot(zp - zn);
    const double coef = -1.0 / (1.0 + std::exp(delta)) / n;
    expect.user_embeddings.row(t.user) += coef * (zp - zn).transpose();
    expect.weights[0] += coef * u * (in.features.matrix(0).row(t.pos) - in.features.matrix(0).row(t.neg));
  }
  EXPECT_LE(max_abs_diff(g, expect), 1e-12);
}

TEST(Backward, EqualEnvLossesCancelVarianceTerm) {
  Instance in = random_instance(8, 2, false);
  Rng rng(2);
  Matrix x = test::random_matrix(8, 4, rng);
  in.features = ModalityFeatureBank(std::vector<Matrix>{x, x});
  in.params.weights[1] = in.params.weights[0];
  in.params.biases[1] = in.params.biases[0];
  const ModelParams a = backward(in.params, in.batch, in.envs, in.features, in.mask, {0, 0, 0});
  const ModelParams b = backward(in.params, in.batch, in.envs, in.features, in.mask, {1000, 0, 0});
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(Backward, UntouchedUsersGetZeroGradient) {
  Instance in = random_instance(9);
  const ModelParams g = backward(in.params, in.batch, in.envs, in.features, in.mask, {10, 0.2, 0.1});
  EXPECT_TRUE(g.user_embeddings.row(4).isZero());
  const LossAndGradient lg = loss_and_gradient(in.params, in.batch, in.envs, in.features, in.mask, {10, 0.2, 0.1});
  EXPECT_EQ(max_abs_diff(lg.gradient, g), 0.0);
}

TEST(Backward, MatchesCentralDifferences) {
  Instance in = random_instance(10, 3);
  const ObjectiveWeights w{1000, 0.05, 1e-3};
  const ModelParams g = backward(in.params, in.batch, in.envs, in.features, in.mask, w);
  ModelParams p = in.params;
  auto views = tensors(p);
  auto grads = tensors(g);
  const double h = 1e-4;
  double worst = 0;
  for (std::size_t t = 0; t < views.size(); ++t) {
    for (std::size_t i = 0; i < views[t].values.size(); ++i) {
      const double keep = views[t].values[i];
      views[t].values[i] = keep + h;
      const double up = total_loss(p, in.batch, in.envs, in.features, in.mask, w).total;
      views[t].values[i] = keep - h;
      const double down = total_loss(p, in.batch, in.envs, in.features, in.mask, w).total;
      views[t].values[i] = keep;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, relative_error(grads[t].values[i], numeric, 1e-6));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(GradCheck, DefaultTrialsPass) {
  GradCheckOptions opt;
  opt.trials = default_gradcheck_trials(1);
  EXPECT_GE(opt.trials.size(), 20u);
  const GradCheckReport r = finite_diff_check(opt);
  EXPECT_LE(r.max_rel_err, kGradCheckTolerance);
  EXPECT_EQ(r.n_trials, opt.trials.size());
  EXPECT_FALSE(r.tensors.empty());
  const std::string json = report_to_json(r, kGradCheckTolerance);
  EXPECT_NE(json.find("\"tensors\""), std::string::npos);
  EXPECT_NE(json.find("W0"), std::string::npos);
}

TEST(GradCheck, LambdaOnlyIsTight) {
  GradCheckOptions opt;
  GradCheckTrial t;
  t.weights = {0.0, 0.5, 0.0};
  t.mask_modalities = true;
  t.variant = EnvVariant::equal_only;
  t.seed = 4;
  opt.trials = {t};
  EXPECT_LE(finite_diff_check(opt).max_rel_err, 1e-6);
}

TEST(GradCheck, ExtremeBetaWithinLooserBound) {
  GradCheckOptions opt;
  for (std::uint64_t s = 0; s < 4; ++s) {
    GradCheckTrial t;
    t.weights = {1000.0, 0.05, 1e-5};
    t.mask_modalities = s % 2 == 1;
    t.seed = 100 + s;
    opt.trials.push_back(t);
  }
  EXPECT_LE(finite_diff_check(opt).max_rel_err, 1e-3);
}

TEST(GradCheck, CorruptedGradientIsCaught) {
  GradCheckOptions opt;
  opt.trials = default_gradcheck_trials(2);
  opt.corrupt_gradient = true;
  EXPECT_GT(finite_diff_check(opt).max_rel_err, kGradCheckTolerance);
}

TEST(TripleSampler, ForcedNegative) {
  InteractionSet train(1, 2, {{0, 0}});
  const std::vector<ItemId> warm{0, 1};
  Rng rng(1);
  for (const auto& t : sample_triples(train, warm, 200, rng)) {
    EXPECT_EQ(t.pos, 0u);
    EXPECT_EQ(t.neg, 1u);
  }
}

TEST(TripleSampler, NegativesAreUniform) {
  InteractionSet train(1, 11, {{0, 0}});
  std::vector<ItemId> warm(11);
  std::iota(warm.begin(), warm.end(), ItemId(0));
  Rng rng(2);
  std::map<ItemId, int> counts;
  for (const auto& t : sample_triples(train, warm, 100000, rng)) ++counts[t.neg];
  EXPECT_EQ(counts.count(0), 0u);
  for (ItemId j = 1; j <= 10; ++j) EXPECT_NEAR(counts[j] / 1e5, 0.1, 0.01) << j;
}

TEST(TripleSampler, ValidAndDeterministic) {
  DatasetBundle b = test::small_bundle(4);
  Rng r1(8), r2(8);
  const TripleBatch a = sample_triples(b.train, b.warm_items, 500, r1);
  EXPECT_EQ(a, sample_triples(b.train, b.warm_items, 500, r2));
  const std::set<ItemId> warm(b.warm_items.begin(), b.warm_items.end());
  for (const auto& t : a) {
    EXPECT_TRUE(b.train.contains(t.user, t.pos));
    EXPECT_FALSE(b.train.contains(t.user, t.neg));
    EXPECT_TRUE(warm.contains(t.neg));
  }
}

TEST(TripleSampler, SaturatedUsersAreSkipped) {
  InteractionSet train(2, 3, {{0, 0}, {0, 1}, {0, 2}, {1, 0}});
  const std::vector<ItemId> warm{0, 1, 2};
  Rng rng(3);
  for (const auto& t : sample_triples(train, warm, 300, rng)) EXPECT_EQ(t.user, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ModelParams p = init_params(3, std::vector<std::size_t>{2}, 2, 1);
  const ModelParams before = p;
  OptimizerState s = OptimizerState::for_params(p);
  adam_step(s, p, ModelParams::zeros_like(p), 1e-3);
  EXPECT_EQ(max_abs_diff(p, before), 0.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesEachCoordinateByLr) {
  Rng rng(5);
  ModelParams p = init_params(3, std::vector<std::size_t>{2}, 2, 1);
  const ModelParams before = p;
  ModelParams g = ModelParams::zeros_like(p);
  for (auto& v : tensors(g))
    for (double& x : v.values) x = rng.normal() + (rng.uniform() < 0.5 ? 2.0 : -2.0);
  OptimizerState s = OptimizerState::for_params(p);
  const double lr = 1e-3;
  adam_step(s, p, g, lr);
  auto tp = tensors(p);
  auto tb = tensors(before);
  auto tg = tensors(g);
  for (std::size_t t = 0; t < tp.size(); ++t)
    for (std::size_t i = 0; i < tp[t].values.size(); ++i) {
      const double step = tp[t].values[i] - tb[t].values[i];
      EXPECT_NEAR(std::abs(step), lr, 1e-8);
      EXPECT_LT(step * tg[t].values[i], 0.0);
    }
}

TEST(Adam, DeterministicAndRejectsNaN) {
  ModelParams p = init_params(2, std::vector<std::size_t>{2}, 2, 1);
  ModelParams q = p;
  ModelParams g = ModelParams::zeros_like(p);
  g.weights[0](0, 1) = 0.5;
  OptimizerState sp = OptimizerState::for_params(p), sq = OptimizerState::for_params(q);
  adam_step(sp, p, g, 1e-2);
  adam_step(sq, q, g, 1e-2);
  EXPECT_EQ(max_abs_diff(p, q), 0.0);
  g.biases[0](1) = std::nan("");
  try {
    adam_step(sp, p, g, 1e-2);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("b0"), std::string::npos) << e.what();
  }
}
