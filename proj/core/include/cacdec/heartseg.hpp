// Patch-based 3D CNN heart segmentation.
//
// Architecture: Conv(7^3,f) - Conv(3^3,2f,s2) - Conv(3^3,4f,s2) - N ResNet
// blocks - TConv(3^3,2f,s2) - TConv(3^3,f,s2) - Conv(7^3,2) - sigmoid, zero
// padding throughout, batch norm + ReLU after every conv except the last.
// Channel 1 is the heart probability. Inference averages overlapping patches.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cacdec/nn/layers.hpp"
#include "cacdec/volume.hpp"

namespace cacdec::heartseg {

struct HeartSegConfig {
  int patch = 64;          // cube edge; divisible by 4 (two stride-2 stages)
  int base_channels = 16;  // f; stages use f, 2f, 4f
  int res_blocks = 9;
  double lr = 1e-3;
  int batch = 10;
  int64_t iterations = 250000;
  double heart_centered_fraction = 0.5;  // batch balancing for heart presence
  Vec3 working_spacing{1.5, 1.5, 3.0};
  int infer_stride = 32;
  double threshold = 0.5;
  uint64_t seed = 1;
  int log_interval = 100;

  nlohmann::json to_json() const;
  static HeartSegConfig from_json(const nlohmann::json& j);
};

class HeartSegModel {
 public:
  HeartSegModel(const HeartSegConfig& cfg, uint64_t seed);

  // (N,1,p,p,p) normalized input -> (N,2,p,p,p) sigmoid probabilities.
  nn::Tensor<float> forward(const nn::Tensor<float>& x, nn::Trace<float>* tr, bool training);

  nn::Sequential<float>& net() { return *net_; }
  const HeartSegConfig& config() const { return cfg_; }
  void set_infer_stride(int stride) { cfg_.infer_stride = stride; }

  void save(const std::string& path, int64_t iterations) const;
  static HeartSegModel load(const std::string& path);

 private:
  HeartSegConfig cfg_;
  std::unique_ptr<nn::Sequential<float>> net_;
};

struct TrainCase {
  Volume image;     // at the working resolution, raw HU
  BinaryMask mask;  // grid-compatible reference
};

struct TrainLog {
  std::vector<std::pair<int64_t, double>> loss_curve;
};

// Dice loss, Adam, batches balanced so that `heart_centered_fraction` of the
// patches are centered inside the reference mask.
TrainLog train_heartseg(HeartSegModel& model, const std::vector<TrainCase>& cases,
                        const HeartSegConfig& cfg);

// Averaged overlapping-patch probability of the heart channel; same grid as v.
Volume heart_probability(HeartSegModel& model, const Volume& v);

BinaryMask threshold_probability(const Volume& prob, double threshold);
void keep_largest_component(BinaryMask& mask, int connectivity = 26);

// threshold 0.5 + largest 26-connected component.
BinaryMask segment_heart(HeartSegModel& model, const Volume& v);

struct SegMetrics {
  double dice = 0;
  double hausdorff_mm = 0;
  double masd_mm = 0;  // mean distance from prediction surface to reference surface
};

SegMetrics seg_metrics(const BinaryMask& pred, const BinaryMask& ref);

}  // namespace cacdec::heartseg
