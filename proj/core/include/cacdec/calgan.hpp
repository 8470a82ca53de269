// Adjusted CycleGAN for decomposing a CT slice into healthy tissue plus a
// calcium map.
//
// The removing generator predicts a nonnegative map that is subtracted from
// the input (synthetic healthy image); the synthesizing generator's map is
// added. Both discriminators are 70x70-receptive-field patch classifiers whose
// per-image score is the mean of the patch responses. The training objective
// is adversarial + cycle (L1) + identity (L1) + sparsity (L1), with L1 terms
// as per-pixel means so the loss weights are resolution independent.

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cacdec/nn/layers.hpp"
#include "cacdec/volume.hpp"

namespace cacdec::calgan {

enum class AdvMode { LogLoss, LeastSquares };

struct GanConfig {
  int side = 224;
  int gen_base = 64;   // generator stages: g, 2g, 4g
  int gen_blocks = 6;
  int disc_base = 64;       // discriminator first-layer channels
  int disc_stride2 = 3;     // stride-2 stages; 3 gives the 70x70 receptive field
  double lr = 1e-4;
  double adam_beta1 = 0.5, adam_beta2 = 0.999;
  double lambda_cycle = 10.0;
  double alpha_identity = 10.0;
  double beta_sparsity = 0.001;
  int batch = 4;
  int64_t iterations = 375000;
  double noise_sigma_px = 0.5;
  int crop_jitter_px = 16;
  double rot_deg = 10.0;
  int pos_bins = 3;
  AdvMode adv_mode = AdvMode::LogLoss;
  double final_bias_init = -3.0;  // start with a near-empty map
  uint64_t seed = 1;
  int log_interval = 50;
  int64_t checkpoint_interval = 5000;

  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json& j);
};

// ---- architectures ----------------------------------------------------------

// Conv(7^2,g) - Conv(3^2,2g,s2) - Conv(3^2,4g,s2) - blocks - TConv(3^2,2g,s2)
// - TConv(3^2,g,s2) - Conv(7^2,1) - sigmoid; reflection padding on convs.
template <typename T>
std::unique_ptr<nn::Sequential<T>> make_generator(int base, int blocks, double final_bias_init,
                                                  uint64_t seed) {
  using namespace cacdec::nn;
  std::mt19937_64 rng(seed);
  auto net = std::make_unique<Sequential<T>>();
  net->template add<Conv<T>>(1, base, std::array<int, 3>{1, 7, 7}, std::array<int, 3>{1, 1, 1},
                             PadMode::Reflect, false)
      ->init(rng);
  net->template add<BatchNorm<T>>(base);
  net->template add<Relu<T>>();
  net->template add<Conv<T>>(base, 2 * base, std::array<int, 3>{1, 3, 3},
                             std::array<int, 3>{1, 2, 2}, PadMode::Reflect, false)
      ->init(rng);
  net->template add<BatchNorm<T>>(2 * base);
  net->template add<Relu<T>>();
  net->template add<Conv<T>>(2 * base, 4 * base, std::array<int, 3>{1, 3, 3},
                             std::array<int, 3>{1, 2, 2}, PadMode::Reflect, false)
      ->init(rng);
  net->template add<BatchNorm<T>>(4 * base);
  net->template add<Relu<T>>();
  for (int i = 0; i < blocks; ++i) {
    auto rb = std::make_unique<ResBlock<T>>(4 * base, false, PadMode::Reflect, NormKind::Batch);
    rb->init(rng);
    net->add_module(std::move(rb));
  }
  net->template add<TConv<T>>(4 * base, 2 * base, std::array<int, 3>{1, 3, 3},
                              std::array<int, 3>{1, 2, 2})
      ->init(rng);
  net->template add<BatchNorm<T>>(2 * base);
  net->template add<Relu<T>>();
  net->template add<TConv<T>>(2 * base, base, std::array<int, 3>{1, 3, 3},
                              std::array<int, 3>{1, 2, 2})
      ->init(rng);
  net->template add<BatchNorm<T>>(base);
  net->template add<Relu<T>>();
  net->template add<Conv<T>>(base, 1, std::array<int, 3>{1, 7, 7}, std::array<int, 3>{1, 1, 1},
                             PadMode::Reflect, true)
      ->init(rng, 0.2, final_bias_init);
  net->template add<Sigmoid<T>>();
  return net;
}

// PatchGAN: stride-2 4x4 convs doubling channels (three of them give the
// 70x70 receptive field), leaky rectifiers, instance norm from the second
// layer on, one stride-1 widening conv, then a 1-channel conv. Output is the
// patch response map; the per-image score is its mean. `stride2_layers` can
// be reduced for small images (each stride-2 stage halves the map).
template <typename T>
std::unique_ptr<nn::Sequential<T>> make_discriminator(int base, uint64_t seed,
                                                      int stride2_layers = 3) {
  using namespace cacdec::nn;
  std::mt19937_64 rng(seed);
  auto net = std::make_unique<Sequential<T>>();
  int ch = base;
  net->template add<Conv<T>>(1, ch, std::array<int, 3>{1, 4, 4}, std::array<int, 3>{1, 2, 2},
                             PadMode::Zero, true)
      ->init(rng);
  net->template add<LeakyRelu<T>>(T(0.2));
  for (int i = 1; i < stride2_layers; ++i) {
    net->template add<Conv<T>>(ch, 2 * ch, std::array<int, 3>{1, 4, 4},
                               std::array<int, 3>{1, 2, 2}, PadMode::Zero, false)
        ->init(rng);
    net->template add<InstanceNorm<T>>(2 * ch);
    net->template add<LeakyRelu<T>>(T(0.2));
    ch *= 2;
  }
  net->template add<Conv<T>>(ch, 2 * ch, std::array<int, 3>{1, 4, 4},
                             std::array<int, 3>{1, 1, 1}, PadMode::Zero, false)
      ->init(rng);
  net->template add<InstanceNorm<T>>(2 * ch);
  net->template add<LeakyRelu<T>>(T(0.2));
  net->template add<Conv<T>>(2 * ch, 1, std::array<int, 3>{1, 4, 4},
                             std::array<int, 3>{1, 1, 1}, PadMode::Zero, true)
      ->init(rng);
  return net;
}

// ---- per-image discriminator score -------------------------------------------

// Log mode: mean over patches of sigmoid(logit), a probability in (0,1).
// Least-squares mode: mean raw response.
template <typename T>
std::vector<double> disc_scores(const nn::Tensor<T>& patch_logits, AdvMode mode) {
  std::vector<double> s(patch_logits.n, 0.0);
  const int sp = patch_logits.spatial();
  for (int n = 0; n < patch_logits.n; ++n) {
    const T* p = &patch_logits.v[patch_logits.index(n, 0, 0, 0, 0)];
    double sum = 0;
    for (int i = 0; i < sp; ++i)
      sum += mode == AdvMode::LogLoss ? 1.0 / (1.0 + std::exp(-static_cast<double>(p[i])))
                                      : static_cast<double>(p[i]);
    s[n] = sum / sp;
  }
  return s;
}

template <typename T>
nn::Tensor<T> disc_scores_backward(const nn::Tensor<T>& patch_logits,
                                   const std::vector<double>& dscore, AdvMode mode) {
  nn::Tensor<T> g = nn::Tensor<T>::like(patch_logits);
  const int sp = patch_logits.spatial();
  for (int n = 0; n < patch_logits.n; ++n) {
    const T* p = &patch_logits.v[patch_logits.index(n, 0, 0, 0, 0)];
    T* gp = &g.v[g.index(n, 0, 0, 0, 0)];
    for (int i = 0; i < sp; ++i) {
      double d = dscore[n] / sp;
      if (mode == AdvMode::LogLoss) {
        double sg = 1.0 / (1.0 + std::exp(-static_cast<double>(p[i])));
        d *= sg * (1.0 - sg);
      }
      gp[i] = static_cast<T>(d);
    }
  }
  return g;
}

// ---- the full objective -------------------------------------------------------

struct GanLossValues {
  double adversarial = 0;
  double cycle = 0;
  double identity = 0;
  double sparsity = 0;
  double total(double lambda, double alpha, double beta) const {
    return adversarial + lambda * cycle + alpha * identity + beta * sparsity;
  }
};

template <typename T>
struct GanNets {
  nn::Module<T>* g_r = nullptr;     // removing generator
  nn::Module<T>* g_s = nullptr;     // synthesizing generator
  nn::Module<T>* d_cac = nullptr;   // judges images in the CAC domain
  nn::Module<T>* d_nocac = nullptr; // judges images in the noCAC domain
};

// Value of the full objective (adversarial written in its log form by
// default), and optionally its exact gradient accumulated into every
// network's parameter grads. This is the function the finite-difference
// check exercises; the training steps below use the same machinery with the
// usual per-player signs.
template <typename T>
GanLossValues gan_losses(const GanNets<T>& nets, const nn::Tensor<T>& cac,
                         const nn::Tensor<T>& nocac, const GanConfig& cfg, bool with_grad);

// ---- slice-level ops -----------------------------------------------------------

struct Decomposition {
  NormalizedSlice cac_map;    // nonnegative, normalized units
  NormalizedSlice synthetic;  // input - map
};

Decomposition decompose(nn::Sequential<float>& g_r, const NormalizedSlice& s);
NormalizedSlice synthesize(nn::Sequential<float>& g_s, const NormalizedSlice& s);

// Batched map prediction for a stack of equally-sized slices.
std::vector<std::vector<float>> predict_maps(nn::Sequential<float>& g_r,
                                             const std::vector<const std::vector<float>*>& data,
                                             int side);

enum class NoiseMode { Smooth, Amplify };

// Gaussian sigma in pixels. Smooth removes noise; amplify adds the residual
// (input - smoothed) back on top. Result is re-clipped to [0,1].
NormalizedSlice noise_augment(const NormalizedSlice& s, NoiseMode mode, double sigma_px = 0.5);

std::vector<float> rotate_bilinear(const std::vector<float>& img, int side, double degrees,
                                   float fill);

// ---- model bundle ---------------------------------------------------------------

struct CycleGan {
  GanConfig cfg;
  std::unique_ptr<nn::Sequential<float>> g_r, g_s, d_cac, d_nocac;

  static CycleGan create(const GanConfig& cfg);
  void save(const std::string& path, int64_t iterations) const;
  static CycleGan load(const std::string& path);
};

struct GanSlice {
  std::vector<float> data;  // src_side * src_side
  int side = 0;             // source side; >= cfg.side to allow crop jitter
  bool cac = false;
  int pos_bin = 0;
};

struct GanTrainLog {
  struct Entry {
    int64_t iteration;
    double d_loss, g_adv, cycle, identity, sparsity;
  };
  std::vector<Entry> entries;
};

// Alternating discriminator/generator Adam updates; batches balanced for
// domain and relative slice position. Writes periodic checkpoints into
// ckpt_dir when non-empty.
GanTrainLog train_cyclegan(CycleGan& model, const std::vector<GanSlice>& slices,
                           const std::string& ckpt_dir = "");

// ---- implementation of the templated objective ----------------------------------

namespace detail {

template <typename T>
nn::Tensor<T> axpy(const nn::Tensor<T>& x, const nn::Tensor<T>& y, T sign_y) {
  nn::Tensor<T> out = nn::Tensor<T>::like(x);
  for (size_t i = 0; i < x.numel(); ++i) out.v[i] = x.v[i] + sign_y * y.v[i];
  return out;
}

template <typename T>
void add_into(nn::Tensor<T>& dst, const nn::Tensor<T>& src, T scale = T(1)) {
  for (size_t i = 0; i < dst.numel(); ++i) dst.v[i] += scale * src.v[i];
}

// mean |x| and mean |x - y| with gradients w.r.t. x, all in double.
template <typename T>
std::pair<double, nn::Tensor<T>> l1_mean_grad(const nn::Tensor<T>& x, const nn::Tensor<T>* y) {
  nn::Tensor<T> g = nn::Tensor<T>::like(x);
  double s = 0;
  const double inv = 1.0 / x.numel();
  for (size_t i = 0; i < x.numel(); ++i) {
    double d = static_cast<double>(x.v[i]) - (y ? static_cast<double>(y->v[i]) : 0.0);
    s += std::abs(d);
    g.v[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * inv);
  }
  return {s * inv, std::move(g)};
}

inline double safe_log(double x) { return std::log(std::max(x, 1e-12)); }

}  // namespace detail

template <typename T>
GanLossValues gan_losses(const GanNets<T>& nets, const nn::Tensor<T>& cac,
                         const nn::Tensor<T>& nocac, const GanConfig& cfg, bool with_grad) {
  using nn::Tensor;
  using nn::Trace;
  if (cac.n == 0 || nocac.n == 0)
    throw std::invalid_argument("gan_losses: empty batch");

  const AdvMode mode = cfg.adv_mode;
  Trace<T> tr_gr1, tr_gs1, tr_gr2, tr_gs2, tr_gr3, tr_gs3;
  Trace<T> tr_da1, tr_da2, tr_db1, tr_db2;
  auto wg = [with_grad](Trace<T>& tr) { return with_grad ? &tr : nullptr; };

  // Removing pathway: map from the CAC image, subtracted.
  Tensor<T> map_r = nets.g_r->forward(cac, wg(tr_gr1), true);
  Tensor<T> fake_nocac = detail::axpy(cac, map_r, T(-1));
  // Synthesizing pathway: map from the noCAC image, added.
  Tensor<T> map_s = nets.g_s->forward(nocac, wg(tr_gs1), true);
  Tensor<T> fake_cac = detail::axpy(nocac, map_s, T(1));

  // Cycles run the opposite pathway on the synthetic image.
  Tensor<T> map_s_cyc = nets.g_s->forward(fake_nocac, wg(tr_gs2), true);
  Tensor<T> rec_cac = detail::axpy(fake_nocac, map_s_cyc, T(1));
  Tensor<T> map_r_cyc = nets.g_r->forward(fake_cac, wg(tr_gr2), true);
  Tensor<T> rec_nocac = detail::axpy(fake_cac, map_r_cyc, T(-1));

  // Identity: each generator shown the other domain should predict nothing.
  Tensor<T> id_r = nets.g_r->forward(nocac, wg(tr_gr3), true);
  Tensor<T> id_s = nets.g_s->forward(cac, wg(tr_gs3), true);

  Tensor<T> pl_real_cac = nets.d_cac->forward(cac, wg(tr_da1), true);
  Tensor<T> pl_fake_cac = nets.d_cac->forward(fake_cac, wg(tr_da2), true);
  Tensor<T> pl_real_nocac = nets.d_nocac->forward(nocac, wg(tr_db1), true);
  Tensor<T> pl_fake_nocac = nets.d_nocac->forward(fake_nocac, wg(tr_db2), true);

  auto s_real_cac = disc_scores(pl_real_cac, mode);
  auto s_fake_cac = disc_scores(pl_fake_cac, mode);
  auto s_real_nocac = disc_scores(pl_real_nocac, mode);
  auto s_fake_nocac = disc_scores(pl_fake_nocac, mode);

  GanLossValues out;
  auto batch_mean = [](const std::vector<double>& v, auto f) {
    double s = 0;
    for (double x : v) s += f(x);
    return s / v.size();
  };
  if (mode == AdvMode::LogLoss) {
    out.adversarial = batch_mean(s_real_cac, [](double s) { return detail::safe_log(s); }) +
                      batch_mean(s_fake_cac, [](double s) { return detail::safe_log(1 - s); }) +
                      batch_mean(s_real_nocac, [](double s) { return detail::safe_log(s); }) +
                      batch_mean(s_fake_nocac, [](double s) { return detail::safe_log(1 - s); });
  } else {
    out.adversarial = batch_mean(s_real_cac, [](double s) { return (s - 1) * (s - 1); }) +
                      batch_mean(s_fake_cac, [](double s) { return s * s; }) +
                      batch_mean(s_real_nocac, [](double s) { return (s - 1) * (s - 1); }) +
                      batch_mean(s_fake_nocac, [](double s) { return s * s; });
  }

  auto [cyc_a, g_cyc_a] = detail::l1_mean_grad(rec_cac, &cac);
  auto [cyc_b, g_cyc_b] = detail::l1_mean_grad(rec_nocac, &nocac);
  out.cycle = cyc_a + cyc_b;
  auto [id_a, g_id_a] = detail::l1_mean_grad(id_r, static_cast<const Tensor<T>*>(nullptr));
  auto [id_b, g_id_b] = detail::l1_mean_grad(id_s, static_cast<const Tensor<T>*>(nullptr));
  out.identity = id_a + id_b;
  auto [sp_a, g_sp_a] = detail::l1_mean_grad(map_r, static_cast<const Tensor<T>*>(nullptr));
  auto [sp_b, g_sp_b] = detail::l1_mean_grad(map_s, static_cast<const Tensor<T>*>(nullptr));
  out.sparsity = sp_a + sp_b;

  if (!with_grad) return out;

  const T lambda = static_cast<T>(cfg.lambda_cycle);
  const T alpha = static_cast<T>(cfg.alpha_identity);
  const T beta = static_cast<T>(cfg.beta_sparsity);

  auto adv_real_grad = [&](const std::vector<double>& s) {
    std::vector<double> d(s.size());
    for (size_t i = 0; i < s.size(); ++i)
      d[i] = mode == AdvMode::LogLoss ? 1.0 / (std::max(s[i], 1e-12) * s.size())
                                      : 2.0 * (s[i] - 1.0) / s.size();
    return d;
  };
  auto adv_fake_grad = [&](const std::vector<double>& s) {
    std::vector<double> d(s.size());
    for (size_t i = 0; i < s.size(); ++i)
      d[i] = mode == AdvMode::LogLoss ? -1.0 / (std::max(1.0 - s[i], 1e-12) * s.size())
                                      : 2.0 * s[i] / s.size();
    return d;
  };

  nets.d_cac->backward(disc_scores_backward(pl_real_cac, adv_real_grad(s_real_cac), mode),
                       tr_da1);
  nets.d_nocac->backward(
      disc_scores_backward(pl_real_nocac, adv_real_grad(s_real_nocac), mode), tr_db1);
  Tensor<T> dfake_cac = nets.d_cac->backward(
      disc_scores_backward(pl_fake_cac, adv_fake_grad(s_fake_cac), mode), tr_da2);
  Tensor<T> dfake_nocac = nets.d_nocac->backward(
      disc_scores_backward(pl_fake_nocac, adv_fake_grad(s_fake_nocac), mode), tr_db2);

  // Cycle CAC: rec_cac = fake_nocac + G_S(fake_nocac).
  Tensor<T> drec_cac = g_cyc_a;
  for (auto& v : drec_cac.v) v *= lambda;
  Tensor<T> d_from_gs = nets.g_s->backward(drec_cac, tr_gs2);
  detail::add_into(dfake_nocac, drec_cac);
  detail::add_into(dfake_nocac, d_from_gs);
  // Cycle noCAC: rec_nocac = fake_cac - G_R(fake_cac).
  Tensor<T> drec_nocac = g_cyc_b;
  for (auto& v : drec_nocac.v) v *= lambda;
  Tensor<T> dmap_r_cyc = drec_nocac;
  for (auto& v : dmap_r_cyc.v) v = -v;
  Tensor<T> d_from_gr = nets.g_r->backward(dmap_r_cyc, tr_gr2);
  detail::add_into(dfake_cac, drec_nocac);
  detail::add_into(dfake_cac, d_from_gr);

  // Identity terms.
  Tensor<T> did_r = g_id_a;
  for (auto& v : did_r.v) v *= alpha;
  nets.g_r->backward(did_r, tr_gr3);
  Tensor<T> did_s = g_id_b;
  for (auto& v : did_s.v) v *= alpha;
  nets.g_s->backward(did_s, tr_gs3);

  // Main pathways: fake_cac = nocac + map_s, fake_nocac = cac - map_r.
  Tensor<T> dmap_s = dfake_cac;
  detail::add_into(dmap_s, g_sp_b, beta);
  nets.g_s->backward(dmap_s, tr_gs1);
  Tensor<T> dmap_r = dfake_nocac;
  for (auto& v : dmap_r.v) v = -v;
  detail::add_into(dmap_r, g_sp_a, beta);
  nets.g_r->backward(dmap_r, tr_gr1);

  return out;
}

}  // namespace cacdec::calgan
