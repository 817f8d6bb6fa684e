#include <milk/environments.hpp>
#include <milk/eval.hpp>
#include <milk/objective.hpp>

#include <benchmark/benchmark.h>

using namespace milk;

namespace {

struct Fixture {
  DatasetBundle bundle;
  ModalityFeatureBank features;
  AvailabilityMask mask;
  ModelParams params;

  explicit Fixture(std::size_t n_users, std::size_t n_items, std::size_t d) {
    SyntheticSpec spec;
    spec.n_users = n_users;
    spec.n_items = n_items;
    spec.seed = 1;
    SyntheticData data = generate_synthetic(spec);
    bundle = make_new_item_split(data.interactions, std::move(data.features), 0.2, 1);
    MaskPair masks = apply_missingness(bundle, MissingnessProtocol::ftmt, {}, 1);
    bundle.train_mask = masks.train_mask;
    bundle.test_mask = masks.test_mask;
    features = impute_bundle_features(bundle, ImputeStrategy::mean);
    mask = bundle.effective_mask();
    params = init_params(bundle.train.n_users(), features.dims(), d, 2, 0.1);
  }
};

const Fixture& fixture() {
  static const Fixture f(2000, 1000, 64);
  return f;
}

void BM_LossAndGradient(benchmark::State& state) {
  const Fixture& f = fixture();
  Rng rng(3);
  const TripleBatch batch = sample_triples(f.bundle.train, f.bundle.warm_items, std::size_t(state.range(0)), rng);
  const EnvironmentSet envs = build_environments(2, std::vector<double>(2, 0.01), rng, EnvVariant::full);
  const ObjectiveWeights w{1000.0, 0.05, 1e-5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_and_gradient(f.params, batch, envs, f.features, f.mask, w));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGradient)->Arg(256)->Arg(2048)->Unit(benchmark::kMillisecond);

void BM_SampleDirichlet(benchmark::State& state) {
  Rng rng(4);
  const std::vector<double> alpha(std::size_t(state.range(0)), 0.01);
  for (auto _ : state) benchmark::DoNotOptimize(sample_dirichlet(alpha, rng));
}
BENCHMARK(BM_SampleDirichlet)->Arg(2)->Arg(3);

void BM_SampleTriples(benchmark::State& state) {
  const Fixture& f = fixture();
  const TripleSampler sampler(f.bundle.train, f.bundle.warm_items);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(sampler.sample(2048, rng));
  state.SetItemsProcessed(state.iterations() * 2048);
}
BENCHMARK(BM_SampleTriples);

void BM_EvaluateTest(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(f.bundle, f.params, f.features, Split::test, kDefaultKs, true));
  }
}
BENCHMARK(BM_EvaluateTest)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
