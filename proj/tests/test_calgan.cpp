#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cacdec/calgan.hpp"
#include "grad_check.hpp"

using namespace cacdec;
using namespace cacdec::calgan;
using cacdec::nn::Param;
using cacdec::nn::Tensor;

namespace {

GanConfig tiny_config() {
  GanConfig cfg;
  cfg.side = 16;
  cfg.gen_base = 6;
  cfg.gen_blocks = 2;
  cfg.disc_base = 6;
  cfg.disc_stride2 = 2;
  cfg.batch = 2;
  cfg.crop_jitter_px = 0;
  cfg.rot_deg = 0;
  cfg.seed = 5;
  return cfg;
}

NormalizedSlice random_slice(int side, uint64_t seed) {
  NormalizedSlice s;
  s.side = side;
  s.data.resize(static_cast<size_t>(side) * side);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : s.data) v = u(rng);
  return s;
}

template <typename T>
void zero_all_params(nn::Module<T>& m) {
  std::vector<Param<T>> ps;
  m.params(ps);
  for (auto& p : ps) std::fill(p.w->begin(), p.w->end(), T(0));
}

}  // namespace

TEST_CASE("noise augmentation leaves constant images unchanged") {
  NormalizedSlice s;
  s.side = 12;
  s.data.assign(144, 0.37f);
  for (auto mode : {NoiseMode::Smooth, NoiseMode::Amplify}) {
    NormalizedSlice out = noise_augment(s, mode);
    for (float v : out.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
  }
}

TEST_CASE("noise amplification pushes every checkerboard pixel away from the mean") {
  NormalizedSlice s;
  s.side = 10;
  s.data.resize(100);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) s.data[y * 10 + x] = (x + y) % 2 == 0 ? 0.4f : 0.6f;
  NormalizedSlice out = noise_augment(s, NoiseMode::Amplify);
  for (int i = 0; i < 100; ++i) {
    float before = std::abs(s.data[i] - 0.5f);
    float after = std::abs(out.data[i] - 0.5f);
    CHECK(after > before);
  }
  NormalizedSlice smooth = noise_augment(s, NoiseMode::Smooth);
  for (int i = 0; i < 100; ++i)
    CHECK(std::abs(smooth.data[i] - 0.5f) < std::abs(s.data[i] - 0.5f));
}

TEST_CASE("generator output is in [0,1] with output dims equal to input dims") {
  auto g = make_generator<float>(6, 2, -3.0, 77);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    NormalizedSlice s = random_slice(24, 1000 + seed);
    Tensor<float> x(1, 1, 1, 24, 24);
    std::copy(s.data.begin(), s.data.end(), x.v.begin());
    Tensor<float> y = g->forward(x, nullptr, false);
    CHECK(y.h == 24);
    CHECK(y.w == 24);
    CHECK(y.c == 1);
    for (float v : y.v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("decompose: reconstruction identity and map nonnegativity") {
  auto g = make_generator<float>(6, 2, -1.0, 42);
  NormalizedSlice s = random_slice(16, 3);
  Decomposition d = decompose(*g, s);
  for (size_t i = 0; i < s.data.size(); ++i) {
    CHECK(d.cac_map.data[i] >= 0.0f);
    CHECK(d.synthetic.data[i] <= s.data[i] + 1e-7f);
    CHECK(d.synthetic.data[i] + d.cac_map.data[i] == doctest::Approx(s.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("decompose with an all-negative-bias generator returns the input unchanged") {
  auto g = make_generator<float>(6, 2, -40.0, 42);
  zero_all_params(*g);
  // Re-set only the final conv bias so the sigmoid saturates at ~0.
  std::vector<Param<float>> ps;
  g->params(ps);
  std::fill(ps.back().w->begin(), ps.back().w->end(), -40.0f);
  NormalizedSlice s = random_slice(16, 4);
  Decomposition d = decompose(*g, s);
  for (size_t i = 0; i < s.data.size(); ++i) {
    CHECK(d.cac_map.data[i] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d.synthetic.data[i] == doctest::Approx(s.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("synthesize adds a nonnegative map") {
  auto g = make_generator<float>(6, 2, -1.0, 43);
  NormalizedSlice s = random_slice(16, 5);
  NormalizedSlice out = synthesize(*g, s);
  for (size_t i = 0; i < s.data.size(); ++i) CHECK(out.data[i] >= s.data[i]);
}

TEST_CASE("gan losses on constant-output networks match hand-derived values") {
  GanConfig cfg = tiny_config();
  auto g_r = make_generator<double>(cfg.gen_base, cfg.gen_blocks, 0.0, 1);
  auto g_s = make_generator<double>(cfg.gen_base, cfg.gen_blocks, 0.0, 2);
  auto d_cac = make_discriminator<double>(cfg.disc_base, 3, cfg.disc_stride2);
  auto d_nocac = make_discriminator<double>(cfg.disc_base, 4, cfg.disc_stride2);
  // All-zero parameters: generators output sigmoid(0) = 0.5 everywhere, the
  // discriminators output logit 0, i.e. probability 0.5 per patch.
  zero_all_params(*g_r);
  zero_all_params(*g_s);
  zero_all_params(*d_cac);
  zero_all_params(*d_nocac);

  Tensor<double> a(2, 1, 1, cfg.side, cfg.side);
  Tensor<double> b(2, 1, 1, cfg.side, cfg.side);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : a.v) v = u(rng);
  for (auto& v : b.v) v = u(rng);

  GanNets<double> nets{g_r.get(), g_s.get(), d_cac.get(), d_nocac.get()};
  GanLossValues lv = gan_losses(nets, a, b, cfg, false);
  // Constant maps cancel in the cycle: rec = (x -/+ c) +/- c = x exactly.
  CHECK(lv.cycle == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lv.identity == doctest::Approx(1.0).epsilon(1e-9));  // 0.5 + 0.5
  CHECK(lv.sparsity == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(lv.adversarial == doctest::Approx(4.0 * std::log(0.5)).epsilon(1e-9));

  GanConfig ls = cfg;
  ls.adv_mode = AdvMode::LeastSquares;
  GanLossValues lv2 = gan_losses(nets, a, b, ls, false);
  CHECK(lv2.adversarial == doctest::Approx(2.0).epsilon(1e-9));  // (0-1)^2 twice

  // Setting all weights to zero reduces the total to the adversarial term.
  CHECK(lv.total(0, 0, 0) == doctest::Approx(lv.adversarial));
  CHECK(lv.total(10, 10, 0.001) ==
        doctest::Approx(lv.adversarial + 10 * lv.cycle + 10 * lv.identity +
                        0.001 * lv.sparsity));
}

TEST_CASE("gan loss gradients match central finite differences on a tiny network") {
  GanConfig cfg;
  cfg.side = 8;
  cfg.gen_base = 4;
  cfg.gen_blocks = 2;
  cfg.disc_base = 4;
  cfg.disc_stride2 = 1;
  cfg.batch = 2;
  auto g_r = make_generator<double>(cfg.gen_base, cfg.gen_blocks, -1.0, 21);
  auto g_s = make_generator<double>(cfg.gen_base, cfg.gen_blocks, -1.0, 22);
  auto d_cac = make_discriminator<double>(cfg.disc_base, 23, cfg.disc_stride2);
  auto d_nocac = make_discriminator<double>(cfg.disc_base, 24, cfg.disc_stride2);
  GanNets<double> nets{g_r.get(), g_s.get(), d_cac.get(), d_nocac.get()};

  Tensor<double> a(2, 1, 1, 8, 8), b(2, 1, 1, 8, 8);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (auto& v : a.v) v = u(rng);
  for (auto& v : b.v) v = u(rng);

  for (auto mode : {AdvMode::LogLoss, AdvMode::LeastSquares}) {
    cfg.adv_mode = mode;
    auto total = [&]() {
      GanLossValues lv = gan_losses(nets, a, b, cfg, false);
      return lv.total(cfg.lambda_cycle, cfg.alpha_identity, cfg.beta_sparsity);
    };
    for (auto* net : {g_r.get(), g_s.get(), d_cac.get(), d_nocac.get()}) {
      cacdec::nn::zero_grads(*net);
    }
    gan_losses(nets, a, b, cfg, true);

    double worst = 0;
    int checked = 0;
    const double h = 1e-5;
    for (auto* net :
         std::vector<nn::Module<double>*>{g_r.get(), g_s.get(), d_cac.get(), d_nocac.get()}) {
      std::vector<Param<double>> ps;
      net->params(ps);
      for (auto& p : ps) {
        for (int s = 0; s < 2; ++s) {
          size_t i = std::uniform_int_distribution<size_t>(0, p.w->size() - 1)(rng);
          double orig = (*p.w)[i];
          (*p.w)[i] = orig + h;
          double fp = total();
          (*p.w)[i] = orig - h;
          double fm = total();
          (*p.w)[i] = orig;
          double fd = (fp - fm) / (2 * h);
          worst = std::max(worst, gradcheck::rel_err(fd, (*p.g)[i]));
          ++checked;
        }
      }
    }
    CHECK(checked > 50);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("short training run keeps all loss components finite and nonnegative") {
  GanConfig cfg = tiny_config();
  cfg.iterations = 60;
  cfg.log_interval = 1;
  CycleGan model = CycleGan::create(cfg);

  std::vector<GanSlice> slices;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<float> u(0, 1);
  for (int i = 0; i < 16; ++i) {
    GanSlice s;
    s.side = cfg.side;
    s.cac = i % 2 == 0;
    s.pos_bin = i % 3;
    s.data.resize(static_cast<size_t>(cfg.side) * cfg.side);
    for (auto& v : s.data) v = 0.1f + 0.05f * u(rng);
    if (s.cac) {
      // a bright blob
      for (int y = 5; y < 9; ++y)
        for (int x = 5; x < 9; ++x) s.data[y * cfg.side + x] = 0.5f;
    }
    slices.push_back(std::move(s));
  }
  GanTrainLog log = train_cyclegan(model, slices);
  REQUIRE(static_cast<int64_t>(log.entries.size()) == cfg.iterations);
  for (const auto& e : log.entries) {
    CHECK(std::isfinite(e.d_loss));
    CHECK(std::isfinite(e.g_adv));
    CHECK(e.d_loss >= 0.0);
    CHECK(e.g_adv >= 0.0);
    CHECK(e.cycle >= 0.0);
    CHECK(e.identity >= 0.0);
    CHECK(e.sparsity >= 0.0);
  }
}

TEST_CASE("fixed seed reproduces the loss trajectory exactly") {
  auto run = [] {
    GanConfig cfg = tiny_config();
    cfg.iterations = 100;
    cfg.log_interval = 1;
    CycleGan model = CycleGan::create(cfg);
    std::vector<GanSlice> slices;
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<float> u(0, 1);
    for (int i = 0; i < 12; ++i) {
      GanSlice s;
      s.side = cfg.side;
      s.cac = i % 2 == 0;
      s.pos_bin = i % 3;
      s.data.resize(static_cast<size_t>(cfg.side) * cfg.side);
      for (auto& v : s.data) v = u(rng);
      slices.push_back(std::move(s));
    }
    return train_cyclegan(model, slices);
  };
  GanTrainLog l1 = run();
  GanTrainLog l2 = run();
  REQUIRE(l1.entries.size() == l2.entries.size());
  for (size_t i = 0; i < l1.entries.size(); ++i) {
    CHECK(l1.entries[i].d_loss == l2.entries[i].d_loss);
    CHECK(l1.entries[i].g_adv == l2.entries[i].g_adv);
    CHECK(l1.entries[i].cycle == l2.entries[i].cycle);
  }
}

TEST_CASE("negative loss weights are rejected") {
  GanConfig cfg = tiny_config();
  cfg.lambda_cycle = -1;
  CHECK_THROWS_AS(CycleGan::create(cfg), std::invalid_argument);
}

TEST_CASE("cyclegan checkpoint round-trips all four networks") {
  GanConfig cfg = tiny_config();
  CycleGan model = CycleGan::create(cfg);
  auto dir = std::filesystem::temp_directory_path() / "cacdec_gan";
  std::filesystem::create_directories(dir);
  model.save((dir / "gan.json").string(), 1);
  CycleGan loaded = CycleGan::load((dir / "gan.json").string());
  NormalizedSlice s = random_slice(cfg.side, 9);
  Decomposition d1 = decompose(*model.g_r, s);
  Decomposition d2 = decompose(*loaded.g_r, s);
  CHECK(d1.cac_map.data == d2.cac_map.data);
}

TEST_CASE("rotation keeps a centered blob roughly in place") {
  std::vector<float> img(32 * 32, 0.0f);
  for (int y = 14; y < 18; ++y)
    for (int x = 14; x < 18; ++x) img[y * 32 + x] = 1.0f;
  std::vector<float> rot = rotate_bilinear(img, 32, 10.0, 0.0f);
  double mass0 = 0, mass1 = 0;
  for (float v : img) mass0 += v;
  for (float v : rot) mass1 += v;
  CHECK(mass1 == doctest::Approx(mass0).epsilon(0.1));
  CHECK(rot[16 * 32 + 16] == doctest::Approx(1.0f).epsilon(1e-3));
}
