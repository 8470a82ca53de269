#include "cacdec/cacslice.hpp"

#include <random>
#include <stdexcept>

#include "cacdec/checkpoint.hpp"
#include "cacdec/nn/adam.hpp"
#include "cacdec/nn/losses.hpp"

using nlohmann::json;
using namespace cacdec::nn;

namespace cacdec::cacslice {

json ClassifierConfig::to_json() const {
  json j;
  j["side"] = side;
  j["base_channels"] = base_channels;
  j["res_blocks"] = res_blocks;
  j["lr"] = lr;
  j["batch"] = batch;
  j["iterations"] = iterations;
  j["seed"] = seed;
  j["log_interval"] = log_interval;
  return j;
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
  ClassifierConfig c;
  c.side = j.value("side", c.side);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.res_blocks = j.value("res_blocks", c.res_blocks);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.log_interval = j.value("log_interval", c.log_interval);
  return c;
}

SliceClassifier::SliceClassifier(const ClassifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  const int c = cfg.base_channels;
  net_ = std::make_unique<Sequential<float>>();
  net_->add<Conv<float>>(1, c, std::array<int, 3>{1, 7, 7}, std::array<int, 3>{1, 1, 1},
                         PadMode::Reflect, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(c);
  net_->add<Relu<float>>();
  net_->add<Conv<float>>(c, 2 * c, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 2, 2},
                         PadMode::Reflect, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(2 * c);
  net_->add<Relu<float>>();
  net_->add<Conv<float>>(2 * c, 4 * c, std::array<int, 3>{1, 3, 3},
                         std::array<int, 3>{1, 2, 2}, PadMode::Reflect, false)
      ->init(rng);
  net_->add<BatchNorm<float>>(4 * c);
  net_->add<Relu<float>>();
  for (int i = 0; i < cfg.res_blocks; ++i) {
    auto rb = std::make_unique<ResBlock<float>>(4 * c, false, PadMode::Reflect, NormKind::Batch);
    rb->init(rng);
    net_->add_module(std::move(rb));
  }
  net_->add<GlobalAvgPool<float>>();
  net_->add<Dense<float>>(4 * c, 2)->init(rng);
}

Tensor<float> SliceClassifier::logits(const Tensor<float>& x, Trace<float>* tr, bool training) {
  return net_->forward(x, tr, training);
}

Tensor<float> SliceClassifier::probabilities(const Tensor<float>& x) {
  return softmax_channels(net_->forward(x, nullptr, false));
}

void SliceClassifier::save(const std::string& path, int64_t iterations) const {
  std::vector<std::vector<float>*> state;
  net_->state(state);
  ckpt::save_checkpoint(path, "classifier", cfg_.to_json(), iterations, state);
}

SliceClassifier SliceClassifier::load(const std::string& path) {
  auto m = ckpt::read_manifest(path);
  if (m.kind != "classifier")
    throw std::runtime_error("checkpoint kind mismatch: expected classifier, got " + m.kind);
  ClassifierConfig cfg = ClassifierConfig::from_json(m.arch);
  SliceClassifier model(cfg, cfg.seed);
  std::vector<std::vector<float>*> state;
  model.net_->state(state);
  ckpt::load_state(path, state);
  return model;
}

Tensor<float> slices_to_tensor(const std::vector<const std::vector<float>*>& slices, int side) {
  Tensor<float> x(static_cast<int>(slices.size()), 1, 1, side, side);
  for (size_t n = 0; n < slices.size(); ++n) {
    if (static_cast<int>(slices[n]->size()) != side * side)
      throw std::invalid_argument("slices_to_tensor: slice size mismatch");
    std::copy(slices[n]->begin(), slices[n]->end(),
              x.v.begin() + n * static_cast<size_t>(side) * side);
  }
  return x;
}

TrainLog train_classifier(SliceClassifier& model, const std::vector<LabeledSlice>& slices,
                          const ClassifierConfig& cfg) {
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < slices.size(); ++i) (slices[i].cac ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw std::invalid_argument("train_classifier: both classes must be present");

  std::mt19937_64 rng(cfg.seed);
  std::vector<Param<float>> params;
  model.net().params(params);
  Adam<float> opt(params, cfg.lr);

  TrainLog log;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<const std::vector<float>*> batch;
    std::vector<int> labels;
    for (int b = 0; b < cfg.batch; ++b) {
      bool take_pos = b % 2 == 0;  // 50/50 class balance per batch
      const auto& pool = take_pos ? pos : neg;
      size_t i = pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
      batch.push_back(&slices[i].data);
      labels.push_back(slices[i].cac ? 1 : 0);
    }
    Tensor<float> x = slices_to_tensor(batch, cfg.side);
    opt.zero_grad();
    Trace<float> tr;
    Tensor<float> lg = model.logits(x, &tr, true);
    auto loss = softmax_cross_entropy(lg, labels);
    model.net().backward(loss.grad, tr);
    opt.step();
    if (it % cfg.log_interval == 0 || it + 1 == cfg.iterations)
      log.loss_curve.push_back({it, loss.value});
  }
  return log;
}

std::vector<bool> classify_slices(SliceClassifier& model,
                                  const std::vector<NormalizedSlice>& slices) {
  std::vector<bool> flags;
  if (slices.empty()) return flags;
  const int side = model.config().side;
  // Batched in fixed-size chunks for memory-bounded inference.
  const size_t chunk = 16;
  for (size_t start = 0; start < slices.size(); start += chunk) {
    size_t end = std::min(slices.size(), start + chunk);
    std::vector<const std::vector<float>*> batch;
    for (size_t i = start; i < end; ++i) {
      if (slices[i].side != side)
        throw std::invalid_argument("classify_slices: slice side does not match the model");
      batch.push_back(&slices[i].data);
    }
    Tensor<float> x = slices_to_tensor(batch, side);
    Tensor<float> p = model.probabilities(x);
    for (int n = 0; n < p.n; ++n)
      flags.push_back(p.at(n, 1, 0, 0, 0) > p.at(n, 0, 0, 0, 0));
  }
  return flags;
}

}  // namespace cacdec::cacslice
