#include <benchmark/benchmark.h>

#include <cmath>

#include "upet/selftrain.hpp"

using namespace upet;

namespace {

Vec random_probs(std::size_t C, Rng& rng) {
  Vec p(C);
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(rng.next_gaussian());
    sum += v;
  }
  for (double& v : p) {
    v /= sum;
  }
  return p;
}

void BM_Softmax(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  Vec logits(n);
  for (double& v : logits) v = rng.next_gaussian();
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(logits));
  }
}
BENCHMARK(BM_Softmax)->Arg(4)->Arg(64)->Arg(1024);

void BM_Entropy(benchmark::State& state) {
  Rng rng(2);
  const Vec p = random_probs(state.range(0), rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(entropy(p));
  }
}
BENCHMARK(BM_Entropy)->Arg(4)->Arg(64);

void BM_Bald(benchmark::State& state) {
  Rng rng(3);
  MCPosterior mc;
  const std::size_t T = state.range(0), C = 4;
  mc.probs = Mat(T, C);
  for (std::size_t t = 0; t < T; ++t) {
    const Vec p = random_probs(C, rng);
    for (std::size_t c = 0; c < C; ++c) {
      mc.probs(t, c) = p[c];
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(bald(mc));
  }
}
BENCHMARK(BM_Bald)->Arg(10)->Arg(50);

void BM_WeightedSample(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng wr(4);
  Vec w(n);
  for (double& v : w) v = wr.next_open_double();
  for (auto _ : state) {
    Rng rng(5);
    benchmark::DoNotOptimize(weighted_sample_without_replacement(w, n / 2, rng));
  }
}
BENCHMARK(BM_WeightedSample)->Arg(100)->Arg(2000);

void BM_Forward(benchmark::State& state) {
  PELConfig pel;
  pel.variant = Variant(state.range(0));
  Rng init(6);
  const std::size_t F = 256, d = 64, C = 4;
  ModelParams p = init_model(pel, F, d, C, init);
  Rng xr(7);
  Vec x(F);
  for (double& v : x) v = xr.next_gaussian();
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict_proba(p, pel, x));
  }
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Arg(2)->Arg(3);

void BM_Grad(benchmark::State& state) {
  PELConfig pel;
  Rng init(8);
  const std::size_t F = 256, d = 64, C = 4;
  ModelParams p = init_model(pel, F, d, C, init);
  Rng xr(9);
  std::vector<Vec> xs;
  for (int i = 0; i < 32; ++i) {
    Vec x(F);
    for (double& v : x) v = xr.next_gaussian();
    xs.push_back(std::move(x));
  }
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    batch.push_back({&xs[i], i % C, nullptr});
  }
  LossConfig loss;
  for (auto _ : state) {
    Gradients g = zero_like(p);
    benchmark::DoNotOptimize(grad(p, pel, true, batch, {}, loss, g));
  }
}
BENCHMARK(BM_Grad);

void BM_ScorePool(benchmark::State& state) {
  PELConfig pel;
  pel.dropout_rate = 0.1;
  Rng init(10);
  const std::size_t F = 16, d = 64, C = 4;
  ModelParams p = init_model(pel, F, d, C, init);
  Rng xr(11);
  std::vector<Example> pool(256);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pool[i].id = i;
    pool[i].features.resize(F);
    for (double& v : pool[i].features) v = xr.next_gaussian();
  }
  pseudo_annotate(p, pel, pool);
  const std::size_t workers = state.range(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_pool(p, pel, pool, 10, 0.1, 0.4, 42, workers));
  }
}
BENCHMARK(BM_ScorePool)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
