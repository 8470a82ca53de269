#include "cacdec/calgan.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include "cacdec/checkpoint.hpp"
#include "cacdec/nn/adam.hpp"

using nlohmann::json;
using namespace cacdec::nn;

namespace cacdec::calgan {

json GanConfig::to_json() const {
  json j;
  j["side"] = side;
  j["gen_base"] = gen_base;
  j["gen_blocks"] = gen_blocks;
  j["disc_base"] = disc_base;
  j["disc_stride2"] = disc_stride2;
  j["lr"] = lr;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["lambda_cycle"] = lambda_cycle;
  j["alpha_identity"] = alpha_identity;
  j["beta_sparsity"] = beta_sparsity;
  j["batch"] = batch;
  j["iterations"] = iterations;
  j["noise_sigma_px"] = noise_sigma_px;
  j["crop_jitter_px"] = crop_jitter_px;
  j["rot_deg"] = rot_deg;
  j["pos_bins"] = pos_bins;
  j["adv_mode"] = adv_mode == AdvMode::LogLoss ? "log" : "lsgan";
  j["final_bias_init"] = final_bias_init;
  j["seed"] = seed;
  j["log_interval"] = log_interval;
  j["checkpoint_interval"] = checkpoint_interval;
  return j;
}

GanConfig GanConfig::from_json(const json& j) {
  GanConfig c;
  c.side = j.value("side", c.side);
  c.gen_base = j.value("gen_base", c.gen_base);
  c.gen_blocks = j.value("gen_blocks", c.gen_blocks);
  c.disc_base = j.value("disc_base", c.disc_base);
  c.disc_stride2 = j.value("disc_stride2", c.disc_stride2);
  c.lr = j.value("lr", c.lr);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.lambda_cycle = j.value("lambda_cycle", c.lambda_cycle);
  c.alpha_identity = j.value("alpha_identity", c.alpha_identity);
  c.beta_sparsity = j.value("beta_sparsity", c.beta_sparsity);
  c.batch = j.value("batch", c.batch);
  c.iterations = j.value("iterations", c.iterations);
  c.noise_sigma_px = j.value("noise_sigma_px", c.noise_sigma_px);
  c.crop_jitter_px = j.value("crop_jitter_px", c.crop_jitter_px);
  c.rot_deg = j.value("rot_deg", c.rot_deg);
  c.pos_bins = j.value("pos_bins", c.pos_bins);
  c.adv_mode = j.value("adv_mode", "log") == std::string("lsgan") ? AdvMode::LeastSquares
                                                                  : AdvMode::LogLoss;
  c.final_bias_init = j.value("final_bias_init", c.final_bias_init);
  c.seed = j.value("seed", c.seed);
  c.log_interval = j.value("log_interval", c.log_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  return c;
}

CycleGan CycleGan::create(const GanConfig& cfg) {
  if (cfg.lambda_cycle < 0 || cfg.alpha_identity < 0 || cfg.beta_sparsity < 0)
    throw std::invalid_argument("cyclegan: loss weights must be nonnegative");
  CycleGan m;
  m.cfg = cfg;
  m.g_r = make_generator<float>(cfg.gen_base, cfg.gen_blocks, cfg.final_bias_init, cfg.seed + 1);
  m.g_s = make_generator<float>(cfg.gen_base, cfg.gen_blocks, cfg.final_bias_init, cfg.seed + 2);
  m.d_cac = make_discriminator<float>(cfg.disc_base, cfg.seed + 3, cfg.disc_stride2);
  m.d_nocac = make_discriminator<float>(cfg.disc_base, cfg.seed + 4, cfg.disc_stride2);
  return m;
}

void CycleGan::save(const std::string& path, int64_t iterations) const {
  std::vector<std::vector<float>*> state;
  g_r->state(state);
  g_s->state(state);
  d_cac->state(state);
  d_nocac->state(state);
  ckpt::save_checkpoint(path, "cyclegan", cfg.to_json(), iterations, state);
}

CycleGan CycleGan::load(const std::string& path) {
  auto m = ckpt::read_manifest(path);
  if (m.kind != "cyclegan")
    throw std::runtime_error("checkpoint kind mismatch: expected cyclegan, got " + m.kind);
  CycleGan model = create(GanConfig::from_json(m.arch));
  std::vector<std::vector<float>*> state;
  model.g_r->state(state);
  model.g_s->state(state);
  model.d_cac->state(state);
  model.d_nocac->state(state);
  ckpt::load_state(path, state);
  return model;
}

// ---- slice ops ------------------------------------------------------------------

std::vector<std::vector<float>> predict_maps(Sequential<float>& g_r,
                                             const std::vector<const std::vector<float>*>& data,
                                             int side) {
  std::vector<std::vector<float>> maps;
  const size_t chunk = 8;
  for (size_t start = 0; start < data.size(); start += chunk) {
    size_t end = std::min(data.size(), start + chunk);
    Tensor<float> x(static_cast<int>(end - start), 1, 1, side, side);
    for (size_t i = start; i < end; ++i)
      std::copy(data[i]->begin(), data[i]->end(),
                x.v.begin() + (i - start) * static_cast<size_t>(side) * side);
    Tensor<float> y = g_r.forward(x, nullptr, false);
    for (size_t i = start; i < end; ++i) {
      auto first = y.v.begin() + (i - start) * static_cast<size_t>(side) * side;
      maps.emplace_back(first, first + static_cast<size_t>(side) * side);
    }
  }
  return maps;
}

Decomposition decompose(Sequential<float>& g_r, const NormalizedSlice& s) {
  auto maps = predict_maps(g_r, {&s.data}, s.side);
  Decomposition d;
  d.cac_map = s;
  d.cac_map.data = std::move(maps[0]);
  d.synthetic = s;
  for (size_t i = 0; i < s.data.size(); ++i)
    d.synthetic.data[i] = s.data[i] - d.cac_map.data[i];
  return d;
}

NormalizedSlice synthesize(Sequential<float>& g_s, const NormalizedSlice& s) {
  auto maps = predict_maps(g_s, {&s.data}, s.side);
  NormalizedSlice out = s;
  for (size_t i = 0; i < s.data.size(); ++i) out.data[i] = s.data[i] + maps[0][i];
  return out;
}

namespace {

// Separable Gaussian with per-pixel renormalized truncated kernel; constants
// are preserved exactly, including at borders.
std::vector<float> gaussian_smooth(const std::vector<float>& img, int side, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k)
    kernel[k + radius] = std::exp(-0.5 * (k / sigma) * (k / sigma));
  std::vector<float> tmp(img.size()), out(img.size());
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double s = 0, w = 0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = x + k;
        if (xx < 0 || xx >= side) continue;
        s += kernel[k + radius] * img[static_cast<size_t>(y) * side + xx];
        w += kernel[k + radius];
      }
      tmp[static_cast<size_t>(y) * side + x] = static_cast<float>(s / w);
    }
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double s = 0, w = 0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = y + k;
        if (yy < 0 || yy >= side) continue;
        s += kernel[k + radius] * tmp[static_cast<size_t>(yy) * side + x];
        w += kernel[k + radius];
      }
      out[static_cast<size_t>(y) * side + x] = static_cast<float>(s / w);
    }
  return out;
}

}  // namespace

NormalizedSlice noise_augment(const NormalizedSlice& s, NoiseMode mode, double sigma_px) {
  NormalizedSlice out = s;
  std::vector<float> smooth = gaussian_smooth(s.data, s.side, sigma_px);
  if (mode == NoiseMode::Smooth) {
    out.data = std::move(smooth);
  } else {
    for (size_t i = 0; i < s.data.size(); ++i)
      out.data[i] = s.data[i] + (s.data[i] - smooth[i]);
  }
  for (auto& v : out.data) v = std::min(1.0f, std::max(0.0f, v));
  return out;
}

std::vector<float> rotate_bilinear(const std::vector<float>& img, int side, double degrees,
                                   float fill) {
  std::vector<float> out(img.size(), fill);
  const double c = (side - 1) / 2.0;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      // Inverse rotation about the image center.
      double dx = x - c, dy = y - c;
      double sx = c + cs * dx + sn * dy;
      double sy = c - sn * dx + cs * dy;
      int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      if (x0 < 0 || y0 < 0 || x0 + 1 >= side || y0 + 1 >= side) continue;
      double tx = sx - x0, ty = sy - y0;
      double v = (1 - ty) * ((1 - tx) * img[static_cast<size_t>(y0) * side + x0] +
                             tx * img[static_cast<size_t>(y0) * side + x0 + 1]) +
                 ty * ((1 - tx) * img[static_cast<size_t>(y0 + 1) * side + x0] +
                       tx * img[static_cast<size_t>(y0 + 1) * side + x0 + 1]);
      out[static_cast<size_t>(y) * side + x] = static_cast<float>(v);
    }
  }
  return out;
}

// ---- training --------------------------------------------------------------------

namespace {

struct Sampler {
  std::vector<std::vector<size_t>> cac_bins, nocac_bins;  // indices per position bin
  std::vector<size_t> cac_all, nocac_all;

  Sampler(const std::vector<GanSlice>& slices, int bins) {
    cac_bins.resize(bins);
    nocac_bins.resize(bins);
    for (size_t i = 0; i < slices.size(); ++i) {
      int b = std::clamp(slices[i].pos_bin, 0, bins - 1);
      if (slices[i].cac) {
        cac_bins[b].push_back(i);
        cac_all.push_back(i);
      } else {
        nocac_bins[b].push_back(i);
        nocac_all.push_back(i);
      }
    }
    if (cac_all.empty() || nocac_all.empty())
      throw std::invalid_argument("train_cyclegan: both domains must be present");
  }

  size_t draw(std::mt19937_64& rng, bool cac, int bin) const {
    const auto& bins = cac ? cac_bins : nocac_bins;
    const auto& all = cac ? cac_all : nocac_all;
    const auto& pool = bins[bin].empty() ? all : bins[bin];
    return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
  }
};

std::vector<float> augment(const GanSlice& s, const GanConfig& cfg, std::mt19937_64& rng) {
  std::vector<float> img = s.data;
  int src = s.side;
  if (cfg.rot_deg > 0) {
    double theta = std::uniform_real_distribution<double>(-cfg.rot_deg, cfg.rot_deg)(rng);
    img = rotate_bilinear(img, src, theta, 0.05f);
  }
  int margin = (src - cfg.side) / 2;
  int j = std::min(cfg.crop_jitter_px, margin);
  int dx = margin, dy = margin;
  if (j > 0) {
    dx = margin + std::uniform_int_distribution<int>(-j, j)(rng);
    dy = margin + std::uniform_int_distribution<int>(-j, j)(rng);
  }
  std::vector<float> crop(static_cast<size_t>(cfg.side) * cfg.side, 0.05f);
  for (int y = 0; y < cfg.side; ++y)
    for (int x = 0; x < cfg.side; ++x) {
      int sx = x + dx, sy = y + dy;
      if (sx >= 0 && sx < src && sy >= 0 && sy < src)
        crop[static_cast<size_t>(y) * cfg.side + x] = img[static_cast<size_t>(sy) * src + sx];
    }
  if (cfg.noise_sigma_px > 0) {
    int mode = std::uniform_int_distribution<int>(0, 2)(rng);
    if (mode > 0) {
      NormalizedSlice ns;
      ns.side = cfg.side;
      ns.data = std::move(crop);
      ns = noise_augment(ns, mode == 1 ? NoiseMode::Smooth : NoiseMode::Amplify,
                         cfg.noise_sigma_px);
      crop = std::move(ns.data);
    }
  }
  return crop;
}

Tensor<float> batch_tensor(const std::vector<std::vector<float>>& slices, int side) {
  Tensor<float> x(static_cast<int>(slices.size()), 1, 1, side, side);
  for (size_t n = 0; n < slices.size(); ++n)
    std::copy(slices[n].begin(), slices[n].end(),
              x.v.begin() + n * static_cast<size_t>(side) * side);
  return x;
}

double d_step(CycleGan& m, const Tensor<float>& a, const Tensor<float>& b, Adam<float>& opt) {
  const AdvMode mode = m.cfg.adv_mode;
  Tensor<float> map_r = m.g_r->forward(a, nullptr, true);
  Tensor<float> fake_b = detail::axpy(a, map_r, -1.0f);
  Tensor<float> map_s = m.g_s->forward(b, nullptr, true);
  Tensor<float> fake_a = detail::axpy(b, map_s, 1.0f);

  opt.zero_grad();
  double loss = 0;
  auto term = [&](Module<float>& d, const Tensor<float>& x, bool real) {
    Trace<float> tr;
    Tensor<float> pl = d.forward(x, &tr, true);
    auto s = disc_scores(pl, mode);
    std::vector<double> ds(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
      if (mode == AdvMode::LogLoss) {
        if (real) {
          loss += -detail::safe_log(s[i]) / s.size();
          ds[i] = -1.0 / (std::max(s[i], 1e-12) * s.size());
        } else {
          loss += -detail::safe_log(1 - s[i]) / s.size();
          ds[i] = 1.0 / (std::max(1 - s[i], 1e-12) * s.size());
        }
      } else {
        double t = real ? s[i] - 1.0 : s[i];
        loss += t * t / s.size();
        ds[i] = 2.0 * t / s.size();
      }
    }
    d.backward(disc_scores_backward(pl, ds, mode), tr);
  };
  term(*m.d_cac, a, true);
  term(*m.d_cac, fake_a, false);
  term(*m.d_nocac, b, true);
  term(*m.d_nocac, fake_b, false);
  opt.step();
  return loss;
}

struct GStepLosses {
  double adv = 0, cycle = 0, identity = 0, sparsity = 0;
};

GStepLosses g_step(CycleGan& m, const Tensor<float>& a, const Tensor<float>& b,
                   Adam<float>& opt) {
  const AdvMode mode = m.cfg.adv_mode;
  const GanConfig& cfg = m.cfg;
  opt.zero_grad();
  GStepLosses out;

  Trace<float> tr_gr1, tr_gs1, tr_gr2, tr_gs2, tr_gr3, tr_gs3, tr_da, tr_db;

  Tensor<float> map_r = m.g_r->forward(a, &tr_gr1, true);
  Tensor<float> fake_b = detail::axpy(a, map_r, -1.0f);
  Tensor<float> map_s = m.g_s->forward(b, &tr_gs1, true);
  Tensor<float> fake_a = detail::axpy(b, map_s, 1.0f);

  // Adversarial, non-saturating: push fakes toward "real".
  Tensor<float> pl_fa = m.d_cac->forward(fake_a, &tr_da, true);
  Tensor<float> pl_fb = m.d_nocac->forward(fake_b, &tr_db, true);
  auto s_fa = disc_scores(pl_fa, mode);
  auto s_fb = disc_scores(pl_fb, mode);
  auto gen_adv = [&](const std::vector<double>& s, double& loss) {
    std::vector<double> ds(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
      if (mode == AdvMode::LogLoss) {
        loss += -detail::safe_log(s[i]) / s.size();
        ds[i] = -1.0 / (std::max(s[i], 1e-12) * s.size());
      } else {
        loss += (s[i] - 1.0) * (s[i] - 1.0) / s.size();
        ds[i] = 2.0 * (s[i] - 1.0) / s.size();
      }
    }
    return ds;
  };
  Tensor<float> dfake_a =
      m.d_cac->backward(disc_scores_backward(pl_fa, gen_adv(s_fa, out.adv), mode), tr_da);
  Tensor<float> dfake_b =
      m.d_nocac->backward(disc_scores_backward(pl_fb, gen_adv(s_fb, out.adv), mode), tr_db);

  // Cycles.
  Tensor<float> map_s_cyc = m.g_s->forward(fake_b, &tr_gs2, true);
  Tensor<float> rec_a = detail::axpy(fake_b, map_s_cyc, 1.0f);
  auto [cyc_a, g_cyc_a] = detail::l1_mean_grad(rec_a, &a);
  Tensor<float> map_r_cyc = m.g_r->forward(fake_a, &tr_gr2, true);
  Tensor<float> rec_b = detail::axpy(fake_a, map_r_cyc, -1.0f);
  auto [cyc_b, g_cyc_b] = detail::l1_mean_grad(rec_b, &b);
  out.cycle = cyc_a + cyc_b;

  const float lambda = static_cast<float>(cfg.lambda_cycle);
  Tensor<float> drec_a = g_cyc_a;
  for (auto& v : drec_a.v) v *= lambda;
  Tensor<float> dfb_cyc = m.g_s->backward(drec_a, tr_gs2);
  detail::add_into(dfake_b, drec_a);
  detail::add_into(dfake_b, dfb_cyc);
  Tensor<float> drec_b = g_cyc_b;
  for (auto& v : drec_b.v) v *= lambda;
  Tensor<float> dmap_r_cyc = drec_b;
  for (auto& v : dmap_r_cyc.v) v = -v;
  Tensor<float> dfa_cyc = m.g_r->backward(dmap_r_cyc, tr_gr2);
  detail::add_into(dfake_a, drec_b);
  detail::add_into(dfake_a, dfa_cyc);

  // Identity.
  Tensor<float> id_r = m.g_r->forward(b, &tr_gr3, true);
  auto [idv_a, g_id_a] = detail::l1_mean_grad(id_r, static_cast<const Tensor<float>*>(nullptr));
  Tensor<float> id_s = m.g_s->forward(a, &tr_gs3, true);
  auto [idv_b, g_id_b] = detail::l1_mean_grad(id_s, static_cast<const Tensor<float>*>(nullptr));
  out.identity = idv_a + idv_b;
  const float alpha = static_cast<float>(cfg.alpha_identity);
  Tensor<float> did_r = g_id_a;
  for (auto& v : did_r.v) v *= alpha;
  m.g_r->backward(did_r, tr_gr3);
  Tensor<float> did_s = g_id_b;
  for (auto& v : did_s.v) v *= alpha;
  m.g_s->backward(did_s, tr_gs3);

  // Sparsity and the main pathway backprop.
  auto [sp_a, g_sp_a] = detail::l1_mean_grad(map_r, static_cast<const Tensor<float>*>(nullptr));
  auto [sp_b, g_sp_b] = detail::l1_mean_grad(map_s, static_cast<const Tensor<float>*>(nullptr));
  out.sparsity = sp_a + sp_b;
  const float beta = static_cast<float>(cfg.beta_sparsity);
  Tensor<float> dmap_s = dfake_a;
  detail::add_into(dmap_s, g_sp_b, beta);
  m.g_s->backward(dmap_s, tr_gs1);
  Tensor<float> dmap_r = dfake_b;
  for (auto& v : dmap_r.v) v = -v;
  detail::add_into(dmap_r, g_sp_a, beta);
  m.g_r->backward(dmap_r, tr_gr1);

  opt.step();
  return out;
}

}  // namespace

GanTrainLog train_cyclegan(CycleGan& m, const std::vector<GanSlice>& slices,
                           const std::string& ckpt_dir) {
  const GanConfig& cfg = m.cfg;
  Sampler sampler(slices, cfg.pos_bins);
  std::mt19937_64 rng(cfg.seed);

  std::vector<Param<float>> gp, dp;
  m.g_r->params(gp);
  m.g_s->params(gp);
  m.d_cac->params(dp);
  m.d_nocac->params(dp);
  Adam<float> opt_g(gp, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  Adam<float> opt_d(dp, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

  GanTrainLog log;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::vector<float>> batch_a, batch_b;
    for (int k = 0; k < cfg.batch; ++k) {
      // One position bin per pair keeps both domains position-balanced.
      int bin = std::uniform_int_distribution<int>(0, cfg.pos_bins - 1)(rng);
      batch_a.push_back(augment(slices[sampler.draw(rng, true, bin)], cfg, rng));
      batch_b.push_back(augment(slices[sampler.draw(rng, false, bin)], cfg, rng));
    }
    Tensor<float> a = batch_tensor(batch_a, cfg.side);
    Tensor<float> b = batch_tensor(batch_b, cfg.side);

    double dl = d_step(m, a, b, opt_d);
    GStepLosses gl = g_step(m, a, b, opt_g);

    if (it % cfg.log_interval == 0 || it + 1 == cfg.iterations)
      log.entries.push_back({it, dl, gl.adv, gl.cycle, gl.identity, gl.sparsity});
    if (!ckpt_dir.empty() &&
        ((it + 1) % cfg.checkpoint_interval == 0 || it + 1 == cfg.iterations)) {
      std::filesystem::create_directories(ckpt_dir);
      m.save((std::filesystem::path(ckpt_dir) / "cyclegan.json").string(), it + 1);
    }
  }
  return log;
}

}  // namespace cacdec::calgan
