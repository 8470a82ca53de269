// Minimal dense tensor in NCDHW layout. 2D networks use d == 1.

#pragma once

#include <array>
#include <cassert>
#include <cstddef>
#include <random>
#include <vector>

namespace cacdec::nn {

template <typename T>
struct Tensor {
  int n = 0, c = 0, d = 1, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int d_, int h_, int w_)
      : n(n_), c(c_), d(d_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * d_ * h_ * w_, T(0)) {}

  static Tensor like(const Tensor& o) { return Tensor(o.n, o.c, o.d, o.h, o.w); }

  size_t numel() const { return v.size(); }
  int spatial() const { return d * h * w; }

  size_t index(int in, int ic, int iz, int iy, int ix) const {
    return ((((static_cast<size_t>(in) * c + ic) * d + iz) * h + iy) * w + ix);
  }
  T& at(int in, int ic, int iz, int iy, int ix) { return v[index(in, ic, iz, iy, ix)]; }
  T at(int in, int ic, int iz, int iy, int ix) const { return v[index(in, ic, iz, iy, ix)]; }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && d == o.d && h == o.h && w == o.w;
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <typename Rng>
  void randn(Rng& rng, T stddev) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    for (auto& x : v) x = static_cast<T>(dist(rng));
  }
};

}  // namespace cacdec::nn
