#include <benchmark/benchmark.h>

#include <random>

#include "cacdec/scoring.hpp"
#include "cacdec/stats.hpp"

using namespace cacdec;

static Volume lesion_map(int n, int lesions) {
  Volume map(n, n, n / 2, {1.0, 1.0, 2.0});
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pos(2, n - 6), hu(50, 600), sz(1, 3);
  for (int l = 0; l < lesions; ++l) {
    int x0 = pos(rng), y0 = pos(rng), z0 = pos(rng) % (n / 2 - 4);
    int s = sz(rng);
    for (int z = z0; z < z0 + s; ++z)
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x) map.at(x, y, z) = static_cast<float>(hu(rng));
  }
  return map;
}

static void LesionExtractionAndScores(benchmark::State& state) {
  Volume map = lesion_map(static_cast<int>(state.range(0)), 24);
  for (auto _ : state) {
    scoring::LesionSet ls = scoring::extract_lesions_from_map(map);
    double pm = scoring::pseudo_mass(ls);
    double ag = scoring::adjusted_agatston(ls);
    benchmark::DoNotOptimize(pm + ag);
  }
}
BENCHMARK(LesionExtractionAndScores)->Arg(64)->Arg(128);

static void ReproducibilityStats(benchmark::State& state) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 500);
  std::normal_distribution<double> noise(0, 25);
  std::vector<std::pair<double, double>> pairs;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    double base = u(rng);
    pairs.push_back({std::max(0.0, base + noise(rng)), std::max(0.0, base + noise(rng))});
  }
  for (auto _ : state) {
    auto icc = stats::icc_absolute_agreement(pairs);
    auto ba = stats::bland_altman(pairs);
    auto dr = stats::delta_r(pairs, true);
    benchmark::DoNotOptimize(icc->icc + ba.bias + dr.mean);
  }
}
BENCHMARK(ReproducibilityStats)->Arg(100)->Arg(1000);
