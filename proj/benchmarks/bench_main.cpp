#include <benchmark/benchmark.h>

#include <random>

#include "align/autograd.hpp"
#include "align/config.hpp"
#include "align/gradcam.hpp"
#include "align/losses.hpp"
#include "align/ops.hpp"
#include "align/synth.hpp"
#include "align/trainer.hpp"

using namespace align;

namespace {

Tensor uniform(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(numel_of(shape));
  for (auto& e : v) e = u(rng);
  return Tensor::from_data(shape, std::move(v));
}

// Conv stages of the default classifier: (channels in, channels out, side).
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({3, 16, 32})->Args({16, 32, 16})->Args({32, 64, 8});
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = state.range(0), f = state.range(1), side = state.range(2);
  Tensor x = uniform({16, c, side, side}, 1);
  Tensor k = uniform({f, c, 3, 3}, 2);
  Tensor b = uniform({f}, 3);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, {1, 1}));
}
BENCHMARK(BM_Conv2dForward)->Apply(conv_args)->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = state.range(0), f = state.range(1), side = state.range(2);
  Tensor x = uniform({16, c, side, side}, 1);
  Tensor k = uniform({f, c, 3, 3}, 2);
  Tensor b = uniform({f}, 3);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  for (auto _ : state) {
    backward(sum(conv2d(x, k, b, {1, 1})));
    x.clear_grad();
    k.clear_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Apply(conv_args)->Unit(benchmark::kMicrosecond);

void BM_GaussianBlur(benchmark::State& state) {
  Tensor x = uniform({16, 3, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_blur(x, 5.0));
}
BENCHMARK(BM_GaussianBlur)->Unit(benchmark::kMicrosecond);

struct Fixture {
  RunConfig config;
  ImageSet train;
  AlignModels models;

  Fixture() : models(make_models(config)) {
    SyntheticSpec spec = config.data;
    std::vector<Sample> samples;
    for (int i = 0; i < 64; ++i) samples.push_back(generate_sample(spec, spec.source_domain, i));
    train = make_image_set(samples);
  }
};

void BM_Explain(benchmark::State& state) {
  Fixture fx;
  BatchSampler sampler(fx.train, fx.config.schedule.batch_size, 0);
  ClassifierBatch batch = sampler.next(1.0);
  ExplainOptions opts;
  opts.create_graph = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(explain(fx.models.classifier, batch.x, batch.labels, opts));
}
BENCHMARK(BM_Explain)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_WarmupStep(benchmark::State& state) {
  Fixture fx;
  BatchSampler sampler(fx.train, fx.config.schedule.batch_size, 0);
  Adam opt(fx.models.classifier.parameters(), fx.config.schedule.lr_classifier);
  TrainState ts;
  for (auto _ : state) {
    ClassifierBatch batch = sampler.next(fx.config.losses.beta_alpha);
    benchmark::DoNotOptimize(warmup_step(ts, batch, fx.models.classifier, opt, fx.config.losses));
  }
}
BENCHMARK(BM_WarmupStep)->Unit(benchmark::kMillisecond);

void BM_JointIteration(benchmark::State& state) {
  Fixture fx;
  BatchSampler sampler(fx.train, fx.config.schedule.batch_size, 0);
  Adam copt(fx.models.classifier.parameters(), fx.config.schedule.lr_classifier);
  Adam mopt(fx.models.masker.parameters(), fx.config.schedule.lr_masker);
  TrainState ts;
  ts.phase = Phase::joint;
  for (auto _ : state) {
    ClassifierBatch batch = sampler.next(fx.config.losses.beta_alpha);
    masker_step(ts, batch.x, batch.labels, fx.models.classifier, fx.models.masker, mopt, fx.config.losses);
    classifier_step(ts, batch, fx.models.classifier, fx.models.masker, copt, fx.config.losses);
  }
}
BENCHMARK(BM_JointIteration)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
