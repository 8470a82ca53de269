// Loss functions returning both the scalar value and the input gradient.

#pragma once

#include <cmath>
#include <vector>

#include "cacdec/nn/tensor.hpp"

namespace cacdec::nn {

template <typename T>
struct Loss {
  double value = 0;
  Tensor<T> grad;
};

// Soft Dice loss on the foreground channel of a two-channel probability map,
// averaged over the batch. Targets are {0,1}. The +1 smoothing keeps empty
// masks finite; a perfect binary prediction scores exactly 0.
template <typename T>
Loss<T> dice_loss(const Tensor<T>& prob, const Tensor<T>& target, double smooth = 1.0) {
  Loss<T> out;
  out.grad = Tensor<T>::like(prob);
  const int sp = prob.spatial();
  double total = 0;
  for (int n = 0; n < prob.n; ++n) {
    const T* p = &prob.v[prob.index(n, 1, 0, 0, 0)];
    const T* t = &target.v[target.index(n, 0, 0, 0, 0)];
    double inter = 0, psum = 0, tsum = 0;
    for (int i = 0; i < sp; ++i) {
      inter += static_cast<double>(p[i]) * t[i];
      psum += p[i];
      tsum += t[i];
    }
    double denom = psum + tsum + smooth;
    double dice = (2.0 * inter + smooth) / denom;
    total += 1.0 - dice;
    T* g = &out.grad.v[out.grad.index(n, 1, 0, 0, 0)];
    for (int i = 0; i < sp; ++i) {
      double d = -(2.0 * t[i] * denom - (2.0 * inter + smooth)) / (denom * denom);
      g[i] = static_cast<T>(d / prob.n);
    }
  }
  out.value = total / prob.n;
  return out;
}

// Cross entropy with logits for (N, C, 1, 1, 1); returns softmax probabilities too.
template <typename T>
struct CeLoss {
  double value = 0;
  Tensor<T> grad;   // w.r.t. logits
  Tensor<T> probs;
};

template <typename T>
CeLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  CeLoss<T> out;
  out.grad = Tensor<T>::like(logits);
  out.probs = Tensor<T>::like(logits);
  double total = 0;
  for (int n = 0; n < logits.n; ++n) {
    T mx = logits.at(n, 0, 0, 0, 0);
    for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.at(n, c, 0, 0, 0));
    double sum = 0;
    for (int c = 0; c < logits.c; ++c)
      sum += std::exp(static_cast<double>(logits.at(n, c, 0, 0, 0) - mx));
    for (int c = 0; c < logits.c; ++c) {
      double p = std::exp(static_cast<double>(logits.at(n, c, 0, 0, 0) - mx)) / sum;
      out.probs.at(n, c, 0, 0, 0) = static_cast<T>(p);
      out.grad.at(n, c, 0, 0, 0) =
          static_cast<T>((p - (c == labels[n] ? 1.0 : 0.0)) / logits.n);
    }
    total += -std::log(std::max(1e-300, static_cast<double>(out.probs.at(n, labels[n], 0, 0, 0))));
  }
  out.value = total / logits.n;
  return out;
}

// Per-pixel mean L1 norm of x; gradient is sign(x)/numel.
template <typename T>
Loss<T> l1_mean(const Tensor<T>& x) {
  Loss<T> out;
  out.grad = Tensor<T>::like(x);
  double s = 0;
  const double inv = 1.0 / x.numel();
  for (size_t i = 0; i < x.numel(); ++i) {
    s += std::abs(static_cast<double>(x.v[i]));
    out.grad.v[i] = static_cast<T>((x.v[i] > T(0) ? 1.0 : x.v[i] < T(0) ? -1.0 : 0.0) * inv);
  }
  out.value = s * inv;
  return out;
}

// Per-pixel mean L1 distance; gradient is w.r.t. a (negate for b).
template <typename T>
Loss<T> l1_mean_diff(const Tensor<T>& a, const Tensor<T>& b) {
  Loss<T> out;
  out.grad = Tensor<T>::like(a);
  double s = 0;
  const double inv = 1.0 / a.numel();
  for (size_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a.v[i]) - b.v[i];
    s += std::abs(d);
    out.grad.v[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * inv);
  }
  out.value = s * inv;
  return out;
}

}  // namespace cacdec::nn
