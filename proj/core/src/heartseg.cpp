#include "cacdec/heartseg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cacdec/cc.hpp"
#include "cacdec/checkpoint.hpp"
#include "cacdec/nn/adam.hpp"
#include "cacdec/nn/losses.hpp"

using nlohmann::json;
using namespace cacdec::nn;

namespace cacdec::heartseg {

json HeartSegConfig::to_json() const {
  json j;
  j["patch"] = patch;
  j["base_channels"] = base_channels;
  j["res_blocks"] = res_blocks;
  j["lr"] = lr;
  j["batch"] = batch;
  j["iterations"] = iterations;
  j["heart_centered_fraction"] = heart_centered_fraction;
  j["working_spacing_mm"] = {working_spacing.x, working_spacing.y, working_spacing.z};
  j["infer_stride"] = infer_stride;
  j["threshold"] = threshold;
  j["seed"] = seed;
  j["log_interval"] = log_interval;
  return j;
}

HeartSegConfig HeartSegConfig::from_json(const json& j) {
  HeartSegConfig c;
  c.patch = j.value("patch", c.patch);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.iterations = j.value("iterations", c.iterations);
  c.heart_centered_fraction = j.value("heart_centered_fraction", c.heart_centered_fraction);
  if (j.contains("working_spacing_mm")) {
    auto s = j["working_spacing_mm"];
    c.working_spacing = {s.at(0), s.at(1), s.at(2)};
  }
  c.infer_stride = j.value("infer_stride", c.infer_stride);
  c.threshold = j.value("threshold", c.threshold);
  c.seed = j.value("seed", c.seed);
  c.log_interval = j.value("log_interval", c.log_interval);
  return c;
}

HeartSegModel::HeartSegModel(const HeartSegConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.patch % 4 != 0)
    throw std::invalid_argument("heartseg: patch size must be divisible by 4");
  std::mt19937_64 rng(seed);
  const int f = cfg.base_channels;
  net_ = std::make_unique<Sequential<float>>();
  net_->add<Conv<float>>(1, f, std::array<int, 3>{7, 7, 7}, std::array<int, 3>{1, 1, 1},
                         PadMode::Zero, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(f);
  net_->add<Relu<float>>();
  net_->add<Conv<float>>(f, 2 * f, std::array<int, 3>{3, 3, 3}, std::array<int, 3>{2, 2, 2},
                         PadMode::Zero, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(2 * f);
  net_->add<Relu<float>>();
  net_->add<Conv<float>>(2 * f, 4 * f, std::array<int, 3>{3, 3, 3},
                         std::array<int, 3>{2, 2, 2}, PadMode::Zero, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(4 * f);
  net_->add<Relu<float>>();
  for (int i = 0; i < cfg.res_blocks; ++i) {
    auto rb = std::make_unique<ResBlock<float>>(4 * f, true, PadMode::Zero, NormKind::Batch);
    rb->init(rng);
    net_->add_module(std::move(rb));
  }
  net_->add<TConv<float>>(4 * f, 2 * f, std::array<int, 3>{3, 3, 3},
                          std::array<int, 3>{2, 2, 2})
      ->init(rng);
  net_->add<BatchNorm<float>>(2 * f);
  net_->add<Relu<float>>();
  net_->add<TConv<float>>(2 * f, f, std::array<int, 3>{3, 3, 3}, std::array<int, 3>{2, 2, 2})
      ->init(rng);
  net_->add<BatchNorm<float>>(f);
  net_->add<Relu<float>>();
  net_->add<Conv<float>>(f, 2, std::array<int, 3>{7, 7, 7}, std::array<int, 3>{1, 1, 1},
                         PadMode::Zero, true)
      ->init(rng, 0.5);
  net_->add<Sigmoid<float>>();
}

Tensor<float> HeartSegModel::forward(const Tensor<float>& x, Trace<float>* tr, bool training) {
  return net_->forward(x, tr, training);
}

void HeartSegModel::save(const std::string& path, int64_t iterations) const {
  std::vector<std::vector<float>*> state;
  net_->state(state);
  ckpt::save_checkpoint(path, "heartseg", cfg_.to_json(), iterations, state);
}

HeartSegModel HeartSegModel::load(const std::string& path) {
  auto m = ckpt::read_manifest(path);
  if (m.kind != "heartseg")
    throw std::runtime_error("checkpoint kind mismatch: expected heartseg, got " + m.kind);
  HeartSegConfig cfg = HeartSegConfig::from_json(m.arch);
  HeartSegModel model(cfg, cfg.seed);
  std::vector<std::vector<float>*> state;
  model.net_->state(state);
  ckpt::load_state(path, state);
  return model;
}

namespace {

// Patch window clamped inside the volume; volumes smaller than a patch are an error.
std::array<int, 3> clamp_corner(const Volume& v, int cx, int cy, int cz, int p) {
  if (v.nx() < p || v.ny() < p || v.nz() < p)
    throw std::invalid_argument("heartseg: volume smaller than one patch");
  int x0 = std::clamp(cx - p / 2, 0, v.nx() - p);
  int y0 = std::clamp(cy - p / 2, 0, v.ny() - p);
  int z0 = std::clamp(cz - p / 2, 0, v.nz() - p);
  return {x0, y0, z0};
}

void fill_patch(const Volume& v, const BinaryMask& m, int x0, int y0, int z0, int p,
                Tensor<float>& x, Tensor<float>& t, int sample, const HuWindow& win) {
  for (int z = 0; z < p; ++z)
    for (int y = 0; y < p; ++y)
      for (int xx = 0; xx < p; ++xx) {
        x.at(sample, 0, z, y, xx) =
            static_cast<float>(win.normalize(v.at(x0 + xx, y0 + y, z0 + z)));
        t.at(sample, 0, z, y, xx) = m.at(x0 + xx, y0 + y, z0 + z) ? 1.0f : 0.0f;
      }
}

}  // namespace

TrainLog train_heartseg(HeartSegModel& model, const std::vector<TrainCase>& cases,
                        const HeartSegConfig& cfg) {
  if (cases.empty()) throw std::invalid_argument("train_heartseg: empty dataset");
  for (const auto& c : cases)
    if (!c.mask.grid_compatible(c.image))
      throw std::invalid_argument("train_heartseg: mask/image grid mismatch");

  // Precompute foreground voxel lists for heart-centered sampling.
  std::vector<std::vector<size_t>> fg(cases.size());
  for (size_t i = 0; i < cases.size(); ++i)
    for (size_t k = 0; k < cases[i].mask.size(); ++k)
      if (cases[i].mask.data()[k]) fg[i].push_back(k);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Param<float>> params;
  model.net().params(params);
  Adam<float> opt(params, cfg.lr);
  HuWindow win;

  const int p = cfg.patch;
  TrainLog log;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    Tensor<float> x(cfg.batch, 1, p, p, p);
    Tensor<float> t(cfg.batch, 1, p, p, p);
    for (int b = 0; b < cfg.batch; ++b) {
      size_t ci = std::uniform_int_distribution<size_t>(0, cases.size() - 1)(rng);
      const Volume& v = cases[ci].image;
      const BinaryMask& m = cases[ci].mask;
      int cx, cy, cz;
      bool centered = std::uniform_real_distribution<double>(0, 1)(rng) <
                          cfg.heart_centered_fraction &&
                      !fg[ci].empty();
      if (centered) {
        size_t k = fg[ci][std::uniform_int_distribution<size_t>(0, fg[ci].size() - 1)(rng)];
        cz = static_cast<int>(k / (static_cast<size_t>(m.ny()) * m.nx()));
        int rem = static_cast<int>(k % (static_cast<size_t>(m.ny()) * m.nx()));
        cy = rem / m.nx();
        cx = rem % m.nx();
      } else {
        cx = std::uniform_int_distribution<int>(0, v.nx() - 1)(rng);
        cy = std::uniform_int_distribution<int>(0, v.ny() - 1)(rng);
        cz = std::uniform_int_distribution<int>(0, v.nz() - 1)(rng);
      }
      auto [x0, y0, z0] = clamp_corner(v, cx, cy, cz, p);
      fill_patch(v, m, x0, y0, z0, p, x, t, b, win);
    }
    opt.zero_grad();
    Trace<float> tr;
    Tensor<float> prob = model.forward(x, &tr, true);
    auto loss = dice_loss(prob, t);
    model.net().backward(loss.grad, tr);
    opt.step();
    if (it % cfg.log_interval == 0 || it + 1 == cfg.iterations)
      log.loss_curve.push_back({it, loss.value});
  }
  return log;
}

Volume heart_probability(HeartSegModel& model, const Volume& v) {
  const HeartSegConfig& cfg = model.config();
  const int p = cfg.patch;
  const int stride = std::max(1, cfg.infer_stride);
  HuWindow win;

  // Pad with 0 HU so volumes smaller than one patch are still analysable.
  int nx = std::max(v.nx(), p), ny = std::max(v.ny(), p), nz = std::max(v.nz(), p);
  Volume padded(nx, ny, nz, v.spacing(), v.origin());
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        padded.at(x, y, z) =
            (x < v.nx() && y < v.ny() && z < v.nz()) ? v.at(x, y, z) : 0.0f;

  auto positions = [&](int n) {
    std::vector<int> pos;
    for (int s = 0; s + p < n; s += stride) pos.push_back(s);
    pos.push_back(n - p);
    return pos;
  };
  std::vector<int> xs = positions(nx), ys = positions(ny), zs = positions(nz);

  Volume acc(nx, ny, nz, v.spacing(), v.origin());
  Volume cnt(nx, ny, nz, v.spacing(), v.origin());
  for (int z0 : zs) {
    for (int y0 : ys) {
      for (int x0 : xs) {
        Tensor<float> x(1, 1, p, p, p);
        for (int z = 0; z < p; ++z)
          for (int y = 0; y < p; ++y)
            for (int xx = 0; xx < p; ++xx)
              x.at(0, 0, z, y, xx) =
                  static_cast<float>(win.normalize(padded.at(x0 + xx, y0 + y, z0 + z)));
        Tensor<float> prob = model.forward(x, nullptr, false);
        for (int z = 0; z < p; ++z)
          for (int y = 0; y < p; ++y)
            for (int xx = 0; xx < p; ++xx) {
              acc.at(x0 + xx, y0 + y, z0 + z) += prob.at(0, 1, z, y, xx);
              cnt.at(x0 + xx, y0 + y, z0 + z) += 1.0f;
            }
      }
    }
  }
  Volume out(v.nx(), v.ny(), v.nz(), v.spacing(), v.origin());
  for (int z = 0; z < v.nz(); ++z)
    for (int y = 0; y < v.ny(); ++y)
      for (int x = 0; x < v.nx(); ++x) out.at(x, y, z) = acc.at(x, y, z) / cnt.at(x, y, z);
  return out;
}

BinaryMask threshold_probability(const Volume& prob, double threshold) {
  BinaryMask m(prob.nx(), prob.ny(), prob.nz(), prob.spacing(), prob.origin());
  for (size_t i = 0; i < prob.size(); ++i)
    m.data()[i] = prob.data()[i] > threshold ? 1 : 0;
  return m;
}

void keep_largest_component(BinaryMask& mask, int connectivity) {
  ComponentLabels cc =
      connected_components(mask.data(), mask.nx(), mask.ny(), mask.nz(), connectivity);
  if (cc.count <= 1) return;
  std::vector<size_t> sizes(cc.count + 1, 0);
  for (int32_t l : cc.labels) ++sizes[l];
  sizes[0] = 0;
  int32_t best = static_cast<int32_t>(
      std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
  for (size_t i = 0; i < mask.size(); ++i)
    mask.data()[i] = cc.labels[i] == best ? 1 : 0;
}

BinaryMask segment_heart(HeartSegModel& model, const Volume& v) {
  Volume prob = heart_probability(model, v);
  BinaryMask m = threshold_probability(prob, model.config().threshold);
  keep_largest_component(m);
  return m;
}

namespace {

std::vector<std::array<int, 3>> surface_voxels(const BinaryMask& m) {
  std::vector<std::array<int, 3>> out;
  auto bg = [&](int x, int y, int z) {
    if (x < 0 || x >= m.nx() || y < 0 || y >= m.ny() || z < 0 || z >= m.nz()) return true;
    return m.at(x, y, z) == 0;
  };
  for (int z = 0; z < m.nz(); ++z)
    for (int y = 0; y < m.ny(); ++y)
      for (int x = 0; x < m.nx(); ++x) {
        if (!m.at(x, y, z)) continue;
        if (bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) || bg(x, y + 1, z) ||
            bg(x, y, z - 1) || bg(x, y, z + 1))
          out.push_back({x, y, z});
      }
  return out;
}

// Directed distances (max and mean) from surface a to surface b, in mm.
std::pair<double, double> directed_surface_distance(
    const std::vector<std::array<int, 3>>& a, const std::vector<std::array<int, 3>>& b,
    const Vec3& sp) {
  double maxd = 0, sum = 0;
#pragma omp parallel for schedule(static) reduction(max : maxd) reduction(+ : sum)
  for (size_t i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      double dx = (a[i][0] - q[0]) * sp.x;
      double dy = (a[i][1] - q[1]) * sp.y;
      double dz = (a[i][2] - q[2]) * sp.z;
      double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) best = d2;
    }
    double d = std::sqrt(best);
    sum += d;
    if (d > maxd) maxd = d;
  }
  return {maxd, a.empty() ? 0.0 : sum / a.size()};
}

}  // namespace

SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& ref) {
  if (!pred.same_grid(ref))
    throw std::invalid_argument("seg_metrics: masks are not grid-compatible");
  size_t ref_count = ref.count();
  if (ref_count == 0) throw std::invalid_argument("seg_metrics: empty reference mask");

  size_t inter = 0, pred_count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool p = pred.data()[i], r = ref.data()[i];
    inter += (p && r);
    pred_count += p;
  }
  SegMetrics out;
  out.dice = 2.0 * inter / (pred_count + ref_count);

  auto sp = surface_voxels(pred);
  auto sr = surface_voxels(ref);
  if (sp.empty()) {
    // Empty prediction: distances are measured from the reference alone.
    auto [maxd, meand] = directed_surface_distance(sr, sr, ref.spacing());
    out.hausdorff_mm = std::numeric_limits<double>::infinity();
    out.masd_mm = std::numeric_limits<double>::infinity();
    (void)maxd;
    (void)meand;
    return out;
  }
  auto [max_pr, mean_pr] = directed_surface_distance(sp, sr, pred.spacing());
  auto [max_rp, mean_rp] = directed_surface_distance(sr, sp, pred.spacing());
  out.hausdorff_mm = std::max(max_pr, max_rp);
  out.masd_mm = mean_pr;  // asymmetric: prediction surface to reference surface
  (void)mean_rp;
  return out;
}

}  // namespace cacdec::heartseg
