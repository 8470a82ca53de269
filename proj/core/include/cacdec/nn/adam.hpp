#pragma once

#include <cmath>
#include <vector>

#include "cacdec/nn/layers.hpp"

namespace cacdec::nn {

template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.w->size(), T(0));
      v_.emplace_back(p.w->size(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.g->begin(), p.g->end(), T(0));
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& w = *params_[k].w;
      auto& g = *params_[k].g;
      auto& m = m_[k];
      auto& v = v_[k];
      for (size_t i = 0; i < w.size(); ++i) {
        double gi = g[i];
        double mi = b1_ * m[i] + (1 - b1_) * gi;
        double vi = b2_ * v[i] + (1 - b2_) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  std::vector<Param<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace cacdec::nn
