// Per-slice classifier flagging axial heart slices with visible calcium.
//
// Conv(7^2,c) - Conv(3^2,2c,s2) - Conv(3^2,4c,s2) - N ResNet blocks - global
// average pool - dense (4c x 2) - softmax, reflection padding.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cacdec/nn/layers.hpp"
#include "cacdec/volume.hpp"

namespace cacdec::cacslice {

struct ClassifierConfig {
  int side = 224;
  int base_channels = 64;  // c; stages use c, 2c, 4c
  int res_blocks = 6;
  double lr = 1e-3;
  int batch = 20;
  int64_t iterations = 1500000;
  uint64_t seed = 1;
  int log_interval = 100;

  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

class SliceClassifier {
 public:
  SliceClassifier(const ClassifierConfig& cfg, uint64_t seed);

  // (N,1,1,side,side) -> logits (N,2,1,1,1). Class 1 = contains CAC.
  nn::Tensor<float> logits(const nn::Tensor<float>& x, nn::Trace<float>* tr, bool training);
  // softmax probabilities, eval mode.
  nn::Tensor<float> probabilities(const nn::Tensor<float>& x);

  nn::Sequential<float>& net() { return *net_; }
  const ClassifierConfig& config() const { return cfg_; }

  void save(const std::string& path, int64_t iterations) const;
  static SliceClassifier load(const std::string& path);

 private:
  ClassifierConfig cfg_;
  std::unique_ptr<nn::Sequential<float>> net_;
};

struct LabeledSlice {
  std::vector<float> data;  // side*side normalized values
  bool cac = false;
};

struct TrainLog {
  std::vector<std::pair<int64_t, double>> loss_curve;
};

// Cross-entropy + Adam; every batch is drawn 50/50 from both classes.
// Throws if either class is absent.
TrainLog train_classifier(SliceClassifier& model, const std::vector<LabeledSlice>& slices,
                          const ClassifierConfig& cfg);

// argmax flags, one per input slice.
std::vector<bool> classify_slices(SliceClassifier& model,
                                  const std::vector<NormalizedSlice>& slices);

nn::Tensor<float> slices_to_tensor(const std::vector<const std::vector<float>*>& slices,
                                   int side);

}  // namespace cacdec::cacslice
