#include <benchmark/benchmark.h>

#include <random>

#include "cacdec/calgan.hpp"
#include "cacdec/heartseg.hpp"

using namespace cacdec;

static void GeneratorForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto g = calgan::make_generator<float>(16, 2, -3.0, 1);
  nn::Tensor<float> x(1, 1, 1, side, side);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : x.v) v = u(rng);
  for (auto _ : state) {
    nn::Tensor<float> y = g->forward(x, nullptr, false);
    benchmark::DoNotOptimize(y.v.data());
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(GeneratorForward)->Arg(32)->Arg(64)->Arg(128);

static void GeneratorTrainStep(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  auto g = calgan::make_generator<float>(16, 2, -3.0, 1);
  nn::Tensor<float> x(2, 1, 1, side, side);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : x.v) v = u(rng);
  for (auto _ : state) {
    nn::zero_grads(*g);
    nn::Trace<float> tr;
    nn::Tensor<float> y = g->forward(x, &tr, true);
    nn::Tensor<float> dy = nn::Tensor<float>::like(y);
    dy.fill(1.0f / dy.numel());
    nn::Tensor<float> dx = g->backward(dy, tr);
    benchmark::DoNotOptimize(dx.v.data());
  }
}
BENCHMARK(GeneratorTrainStep)->Arg(32)->Arg(64);

static void HeartSegPatchForward(benchmark::State& state) {
  heartseg::HeartSegConfig cfg;
  cfg.patch = static_cast<int>(state.range(0));
  cfg.base_channels = 8;
  cfg.res_blocks = 2;
  heartseg::HeartSegModel model(cfg, 1);
  nn::Tensor<float> x(1, 1, cfg.patch, cfg.patch, cfg.patch);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : x.v) v = u(rng);
  for (auto _ : state) {
    nn::Tensor<float> y = model.forward(x, nullptr, false);
    benchmark::DoNotOptimize(y.v.data());
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(HeartSegPatchForward)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
