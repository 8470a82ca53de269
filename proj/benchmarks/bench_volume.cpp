#include <benchmark/benchmark.h>

#include <random>

#include "cacdec/phantom.hpp"
#include "cacdec/volume.hpp"

using namespace cacdec;

static Volume make_volume(int n) {
  Volume v(n, n, n / 2, {1.0, 1.0, 2.0});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1000, 1000);
  for (auto& x : v.data()) x = u(rng);
  return v;
}

static void ResampleTrilinear(benchmark::State& state) {
  Volume v = make_volume(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Volume r = resample(v, {1.5, 1.5, 3.0}, Interp::Linear);
    benchmark::DoNotOptimize(r.data().data());
  }
  state.SetItemsProcessed(state.iterations() * v.size());
}
BENCHMARK(ResampleTrilinear)->Arg(64)->Arg(128)->Arg(256);

static void PhantomGeneration(benchmark::State& state) {
  phantom::FamilyParams fam;
  int n = static_cast<int>(state.range(0));
  fam.dims = {n, n, n * 2 / 3};
  uint64_t seed = 0;
  for (auto _ : state) {
    auto spec = phantom::make_random_spec(fam, seed++);
    auto [vol, truth] = phantom::generate_phantom(spec);
    benchmark::DoNotOptimize(vol.data().data());
  }
}
BENCHMARK(PhantomGeneration)->Arg(48)->Arg(64);

static void NormalizeSlice(benchmark::State& state) {
  Volume v = make_volume(256);
  for (auto _ : state) {
    NormalizedSlice s = normalize_slice(v, 64, {128, 128, 64}, 224);
    benchmark::DoNotOptimize(s.data.data());
  }
}
BENCHMARK(NormalizeSlice);
