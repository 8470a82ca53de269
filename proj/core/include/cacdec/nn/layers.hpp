// CNN building blocks with explicit forward/backward passes.
//
// Layers cache what backward needs on a Trace stack owned by the caller, so a
// network can be run forward several times before the matching backwards are
// applied (the CycleGAN update needs this). backward() pops caches in exact
// reverse order of the forward() pushes. Convolutions are im2col + Eigen GEMM,
// parallelized over batch samples with deterministic per-thread accumulation.

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include "cacdec/nn/tensor.hpp"

namespace cacdec::nn {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<MatX<T>>;
template <typename T>
using CMapMat = Eigen::Map<const MatX<T>>;

template <typename T>
struct LayerCache {
  std::vector<Tensor<T>> t;
  std::vector<std::vector<T>> vecs;
};

template <typename T>
struct Trace {
  std::vector<LayerCache<T>> stack;
  LayerCache<T>& push() {
    stack.emplace_back();
    return stack.back();
  }
  LayerCache<T> pop() {
    LayerCache<T> c = std::move(stack.back());
    stack.pop_back();
    return c;
  }
};

template <typename T>
struct Param {
  std::vector<T>* w = nullptr;
  std::vector<T>* g = nullptr;
};

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  // tr == nullptr runs inference-only (no caches kept).
  virtual Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) = 0;
  virtual void params(std::vector<Param<T>>& out) { (void)out; }
  // Everything a checkpoint must persist: params plus e.g. norm running stats.
  virtual void state(std::vector<std::vector<T>*>& out) { (void)out; }
};

enum class PadMode { Zero, Reflect };

namespace detail {

inline int reflect_index(int q, int n) {
  // reflect-101: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
  if (q < 0) q = -q;
  if (q >= n) q = 2 * n - 2 - q;
  return q;
}

template <typename T>
Tensor<T> pad_tensor(const Tensor<T>& x, int pd, int ph, int pw, PadMode mode) {
  if (pd == 0 && ph == 0 && pw == 0) return x;
  Tensor<T> out(x.n, x.c, x.d + 2 * pd, x.h + 2 * ph, x.w + 2 * pw);
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < x.n * x.c; ++nc) {
    int in = nc / x.c, ic = nc % x.c;
    for (int z = 0; z < out.d; ++z) {
      int sz = z - pd;
      bool zin = sz >= 0 && sz < x.d;
      if (mode == PadMode::Reflect) sz = reflect_index(sz, x.d);
      for (int y = 0; y < out.h; ++y) {
        int sy = y - ph;
        bool yin = sy >= 0 && sy < x.h;
        if (mode == PadMode::Reflect) sy = reflect_index(sy, x.h);
        for (int xx = 0; xx < out.w; ++xx) {
          int sx = xx - pw;
          bool xin = sx >= 0 && sx < x.w;
          if (mode == PadMode::Reflect) sx = reflect_index(sx, x.w);
          T val;
          if (mode == PadMode::Zero && !(zin && yin && xin))
            val = T(0);
          else
            val = x.at(in, ic, sz, sy, sx);
          out.at(in, ic, z, y, xx) = val;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pad_backward(const Tensor<T>& dxp, int d, int h, int w, int pd, int ph, int pw,
                       PadMode mode) {
  if (pd == 0 && ph == 0 && pw == 0) return dxp;
  Tensor<T> dx(dxp.n, dxp.c, d, h, w);
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < dxp.n * dxp.c; ++nc) {
    int in = nc / dxp.c, ic = nc % dxp.c;
    for (int z = 0; z < dxp.d; ++z) {
      int sz = z - pd;
      if (mode == PadMode::Zero && (sz < 0 || sz >= d)) continue;
      if (mode == PadMode::Reflect) sz = reflect_index(sz, d);
      for (int y = 0; y < dxp.h; ++y) {
        int sy = y - ph;
        if (mode == PadMode::Zero && (sy < 0 || sy >= h)) continue;
        if (mode == PadMode::Reflect) sy = reflect_index(sy, h);
        for (int xx = 0; xx < dxp.w; ++xx) {
          int sx = xx - pw;
          if (mode == PadMode::Zero && (sx < 0 || sx >= w)) continue;
          if (mode == PadMode::Reflect) sx = reflect_index(sx, w);
          dx.at(in, ic, sz, sy, sx) += dxp.at(in, ic, z, y, xx);
        }
      }
    }
  }
  return dx;
}

// Gathers conv patches for output positions [p0, p1) of one padded sample.
// col is (c*kd*kh*kw) x (p1-p0), row-major. Positions are walked as runs
// along the fastest output axis to avoid per-element index arithmetic.
template <typename T>
void im2col_range(const Tensor<T>& xp, int sample, int kd, int kh, int kw, int sd, int sh,
                  int sw, int od, int oh, int ow, size_t p0, size_t p1, T* col) {
  (void)od;
  const size_t L = p1 - p0;
  const int c = xp.c;
  size_t row = 0;
  for (int ic = 0; ic < c; ++ic) {
    for (int kz = 0; kz < kd; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx, ++row) {
          T* dst = col + row * L;
          size_t p = p0;
          int zo = static_cast<int>(p / (static_cast<size_t>(oh) * ow));
          int rem = static_cast<int>(p % (static_cast<size_t>(oh) * ow));
          int yo = rem / ow, xo = rem % ow;
          while (p < p1) {
            int run = static_cast<int>(std::min<size_t>(ow - xo, p1 - p));
            const T* src = &xp.v[xp.index(sample, ic, zo * sd + kz, yo * sh + ky, xo * sw + kx)];
            T* out = dst + (p - p0);
            if (sw == 1)
              std::copy(src, src + run, out);
            else
              for (int i = 0; i < run; ++i) out[i] = src[i * sw];
            p += run;
            xo = 0;
            if (++yo == oh) {
              yo = 0;
              ++zo;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col_range: scatter-adds columns back into the padded sample.
template <typename T>
void col2im_range(Tensor<T>& xp, int sample, int kd, int kh, int kw, int sd, int sh, int sw,
                  int od, int oh, int ow, size_t p0, size_t p1, const T* col) {
  (void)od;
  const size_t L = p1 - p0;
  const int c = xp.c;
  size_t row = 0;
  for (int ic = 0; ic < c; ++ic) {
    for (int kz = 0; kz < kd; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx, ++row) {
          const T* src0 = col + row * L;
          size_t p = p0;
          int zo = static_cast<int>(p / (static_cast<size_t>(oh) * ow));
          int rem = static_cast<int>(p % (static_cast<size_t>(oh) * ow));
          int yo = rem / ow, xo = rem % ow;
          while (p < p1) {
            int run = static_cast<int>(std::min<size_t>(ow - xo, p1 - p));
            T* dst = &xp.v[xp.index(sample, ic, zo * sd + kz, yo * sh + ky, xo * sw + kx)];
            const T* src = src0 + (p - p0);
            if (sw == 1)
              for (int i = 0; i < run; ++i) dst[i] += src[i];
            else
              for (int i = 0; i < run; ++i) dst[i * sw] += src[i];
            p += run;
            xo = 0;
            if (++yo == oh) {
              yo = 0;
              ++zo;
            }
          }
        }
      }
    }
  }
}

inline size_t col_chunk(size_t K, size_t L) {
  constexpr size_t kBudget = size_t(4) << 20;  // elements per col buffer
  return std::max<size_t>(1, std::min(L, kBudget / std::max<size_t>(1, K)));
}

}  // namespace detail

// --- convolution -------------------------------------------------------------

template <typename T>
class Conv : public Module<T> {
 public:
  Conv(int in_c, int out_c, std::array<int, 3> kernel, std::array<int, 3> stride,
       PadMode pad_mode, bool bias = true)
      : in_c_(in_c), out_c_(out_c), k_(kernel), s_(stride), pad_mode_(pad_mode),
        has_bias_(bias) {
    p_ = {(k_[0] - 1) / 2, (k_[1] - 1) / 2, (k_[2] - 1) / 2};
    K_ = in_c_ * k_[0] * k_[1] * k_[2];
    w_.assign(static_cast<size_t>(out_c_) * K_, T(0));
    gw_.assign(w_.size(), T(0));
    b_.assign(out_c_, T(0));
    gb_.assign(out_c_, T(0));
  }

  template <typename Rng>
  void init(Rng& rng, double scale = 1.0, double bias_init = 0.0) {
    std::normal_distribution<double> dist(0.0, scale * std::sqrt(2.0 / K_));
    for (auto& x : w_) x = static_cast<T>(dist(rng));
    for (auto& x : b_) x = static_cast<T>(bias_init);
  }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    if (x.c != in_c_) throw std::invalid_argument("Conv: channel mismatch");
    Tensor<T> xp = detail::pad_tensor(x, p_[0], p_[1], p_[2], pad_mode_);
    int od = (xp.d - k_[0]) / s_[0] + 1;
    int oh = (xp.h - k_[1]) / s_[1] + 1;
    int ow = (xp.w - k_[2]) / s_[2] + 1;
    if (od < 1 || oh < 1 || ow < 1)
      throw std::invalid_argument("Conv: input " + std::to_string(x.d) + "x" +
                                  std::to_string(x.h) + "x" + std::to_string(x.w) +
                                  " too small for this kernel/stride");
    Tensor<T> y(x.n, out_c_, od, oh, ow);
    const size_t L = static_cast<size_t>(od) * oh * ow;
    const size_t chunk = detail::col_chunk(K_, L);
#pragma omp parallel
    {
      std::vector<T> col(K_ * chunk);
#pragma omp for schedule(static)
      for (int n = 0; n < x.n; ++n) {
        for (size_t p0 = 0; p0 < L; p0 += chunk) {
          size_t p1 = std::min(L, p0 + chunk);
          detail::im2col_range(xp, n, k_[0], k_[1], k_[2], s_[0], s_[1], s_[2], od, oh, ow, p0,
                               p1, col.data());
          CMapMat<T> W(w_.data(), out_c_, K_);
          CMapMat<T> C(col.data(), K_, p1 - p0);
          // Output rows for one sample are L apart, not (p1-p0); copy row by row.
          MatX<T> prod = W * C;
          for (int co = 0; co < out_c_; ++co) {
            T* dst = &y.v[y.index(n, co, 0, 0, 0) + p0];
            for (size_t i = 0; i < p1 - p0; ++i)
              dst[i] = prod(co, i) + (has_bias_ ? b_[co] : T(0));
          }
        }
      }
    }
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(std::move(xp));
      c.vecs.push_back({static_cast<T>(x.d), static_cast<T>(x.h), static_cast<T>(x.w)});
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    Tensor<T>& xp = c.t[0];
    const int xd = static_cast<int>(c.vecs[0][0]);
    const int xh = static_cast<int>(c.vecs[0][1]);
    const int xw = static_cast<int>(c.vecs[0][2]);
    int od = dy.d, oh = dy.h, ow = dy.w;
    const size_t L = static_cast<size_t>(od) * oh * ow;
    const size_t chunk = detail::col_chunk(K_, L);
    Tensor<T> dxp(xp.n, xp.c, xp.d, xp.h, xp.w);

    int nth = 1;
#ifdef _OPENMP
    nth = omp_get_max_threads();
#endif
    std::vector<std::vector<T>> gw_local(nth, std::vector<T>(w_.size(), T(0)));
    std::vector<std::vector<T>> gb_local(nth, std::vector<T>(b_.size(), T(0)));

#pragma omp parallel
    {
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      std::vector<T> col(K_ * chunk), dcol(K_ * chunk);
#pragma omp for schedule(static)
      for (int n = 0; n < dy.n; ++n) {
        for (size_t p0 = 0; p0 < L; p0 += chunk) {
          size_t p1 = std::min(L, p0 + chunk);
          size_t Lc = p1 - p0;
          detail::im2col_range(xp, n, k_[0], k_[1], k_[2], s_[0], s_[1], s_[2], od, oh, ow, p0,
                               p1, col.data());
          MatX<T> dY(out_c_, Lc);
          for (int co = 0; co < out_c_; ++co) {
            const T* src = &dy.v[dy.index(n, co, 0, 0, 0) + p0];
            for (size_t i = 0; i < Lc; ++i) dY(co, i) = src[i];
          }
          CMapMat<T> C(col.data(), K_, Lc);
          MapMat<T> GW(gw_local[tid].data(), out_c_, K_);
          GW.noalias() += dY * C.transpose();
          if (has_bias_)
            for (int co = 0; co < out_c_; ++co) gb_local[tid][co] += dY.row(co).sum();
          CMapMat<T> W(w_.data(), out_c_, K_);
          MapMat<T> DC(dcol.data(), K_, Lc);
          DC.noalias() = W.transpose() * dY;
          detail::col2im_range(dxp, n, k_[0], k_[1], k_[2], s_[0], s_[1], s_[2], od, oh, ow, p0,
                               p1, dcol.data());
        }
      }
    }
    for (int t = 0; t < nth; ++t) {
      for (size_t i = 0; i < w_.size(); ++i) gw_[i] += gw_local[t][i];
      for (size_t i = 0; i < b_.size(); ++i) gb_[i] += gb_local[t][i];
    }
    return detail::pad_backward(dxp, xd, xh, xw, p_[0], p_[1], p_[2], pad_mode_);
  }

  void params(std::vector<Param<T>>& out) override {
    out.push_back({&w_, &gw_});
    if (has_bias_) out.push_back({&b_, &gb_});
  }
  void state(std::vector<std::vector<T>*>& out) override {
    out.push_back(&w_);
    if (has_bias_) out.push_back(&b_);
  }

 private:
  int in_c_, out_c_;
  std::array<int, 3> k_, s_, p_;
  PadMode pad_mode_;
  bool has_bias_;
  int K_;
  std::vector<T> w_, gw_, b_, gb_;
};

// Transposed convolution with stride 2 semantics: out = in * stride
// (kernel k, pad (k-1)/2, output padding stride-1). Zero padding.
template <typename T>
class TConv : public Module<T> {
 public:
  TConv(int in_c, int out_c, std::array<int, 3> kernel, std::array<int, 3> stride)
      : in_c_(in_c), out_c_(out_c), k_(kernel), s_(stride) {
    p_ = {(k_[0] - 1) / 2, (k_[1] - 1) / 2, (k_[2] - 1) / 2};
    op_ = {s_[0] - 1, s_[1] - 1, s_[2] - 1};
    K_ = out_c_ * k_[0] * k_[1] * k_[2];
    w_.assign(static_cast<size_t>(in_c_) * K_, T(0));
    gw_.assign(w_.size(), T(0));
    b_.assign(out_c_, T(0));
    gb_.assign(out_c_, T(0));
  }

  template <typename Rng>
  void init(Rng& rng, double scale = 1.0) {
    int fan_in = in_c_ * k_[0] * k_[1] * k_[2];
    std::normal_distribution<double> dist(0.0, scale * std::sqrt(2.0 / fan_in));
    for (auto& x : w_) x = static_cast<T>(dist(rng));
    std::fill(b_.begin(), b_.end(), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    if (x.c != in_c_) throw std::invalid_argument("TConv: channel mismatch");
    int od = (x.d - 1) * s_[0] - 2 * p_[0] + k_[0] + op_[0];
    int oh = (x.h - 1) * s_[1] - 2 * p_[1] + k_[1] + op_[1];
    int ow = (x.w - 1) * s_[2] - 2 * p_[2] + k_[2] + op_[2];
    if (od < 1 || oh < 1 || ow < 1)
      throw std::invalid_argument("TConv: input too small for this kernel/stride");
    Tensor<T> yp(x.n, out_c_, od + 2 * p_[0], oh + 2 * p_[1], ow + 2 * p_[2]);
    const size_t Lin = static_cast<size_t>(x.d) * x.h * x.w;
#pragma omp parallel
    {
      std::vector<T> cols(static_cast<size_t>(K_) * Lin);
#pragma omp for schedule(static)
      for (int n = 0; n < x.n; ++n) {
        CMapMat<T> W(w_.data(), in_c_, K_);
        CMapMat<T> X(&x.v[x.index(n, 0, 0, 0, 0)], in_c_, Lin);
        MapMat<T> C(cols.data(), K_, Lin);
        C.noalias() = W.transpose() * X;
        detail::col2im_range(yp, n, k_[0], k_[1], k_[2], s_[0], s_[1], s_[2], x.d, x.h, x.w, 0,
                             Lin, cols.data());
      }
    }
    Tensor<T> y = detail::pad_backward(yp, od, oh, ow, p_[0], p_[1], p_[2], PadMode::Zero);
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < y.n * y.c; ++nc) {
      int co = nc % y.c;
      T* dst = &y.v[static_cast<size_t>(nc) * y.spatial()];
      for (int i = 0; i < y.spatial(); ++i) dst[i] += b_[co];
    }
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(x);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& x = c.t[0];
    Tensor<T> dyp = detail::pad_tensor(dy, p_[0], p_[1], p_[2], PadMode::Zero);
    const size_t Lin = static_cast<size_t>(x.d) * x.h * x.w;
    Tensor<T> dx(x.n, x.c, x.d, x.h, x.w);

    int nth = 1;
#ifdef _OPENMP
    nth = omp_get_max_threads();
#endif
    std::vector<std::vector<T>> gw_local(nth, std::vector<T>(w_.size(), T(0)));
    std::vector<std::vector<T>> gb_local(nth, std::vector<T>(b_.size(), T(0)));

#pragma omp parallel
    {
      int tid = 0;
#ifdef _OPENMP
      tid = omp_get_thread_num();
#endif
      std::vector<T> dcols(static_cast<size_t>(K_) * Lin);
#pragma omp for schedule(static)
      for (int n = 0; n < dy.n; ++n) {
        detail::im2col_range(dyp, n, k_[0], k_[1], k_[2], s_[0], s_[1], s_[2], x.d, x.h, x.w, 0,
                             Lin, dcols.data());
        CMapMat<T> DC(dcols.data(), K_, Lin);
        CMapMat<T> W(w_.data(), in_c_, K_);
        MapMat<T> DX(&dx.v[dx.index(n, 0, 0, 0, 0)], in_c_, Lin);
        DX.noalias() = W * DC;
        CMapMat<T> X(&x.v[x.index(n, 0, 0, 0, 0)], in_c_, Lin);
        MapMat<T> GW(gw_local[tid].data(), in_c_, K_);
        GW.noalias() += X * DC.transpose();
        for (int co = 0; co < out_c_; ++co) {
          const T* src = &dy.v[dy.index(n, co, 0, 0, 0)];
          T s = T(0);
          for (int i = 0; i < dy.spatial(); ++i) s += src[i];
          gb_local[tid][co] += s;
        }
      }
    }
    for (int t = 0; t < nth; ++t) {
      for (size_t i = 0; i < w_.size(); ++i) gw_[i] += gw_local[t][i];
      for (size_t i = 0; i < b_.size(); ++i) gb_[i] += gb_local[t][i];
    }
    return dx;
  }

  void params(std::vector<Param<T>>& out) override {
    out.push_back({&w_, &gw_});
    out.push_back({&b_, &gb_});
  }
  void state(std::vector<std::vector<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  int in_c_, out_c_;
  std::array<int, 3> k_, s_, p_, op_;
  int K_;
  std::vector<T> w_, gw_, b_, gb_;
};

// --- normalization -----------------------------------------------------------

template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int channels, T momentum = T(0.1), T eps = T(1e-5))
      : c_(channels), momentum_(momentum), eps_(eps) {
    gamma_.assign(c_, T(1));
    beta_.assign(c_, T(0));
    ggamma_.assign(c_, T(0));
    gbeta_.assign(c_, T(0));
    run_mean_.assign(c_, T(0));
    run_var_.assign(c_, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool training) override {
    Tensor<T> y = Tensor<T>::like(x);
    const int sp = x.spatial();
    const size_t M = static_cast<size_t>(x.n) * sp;
    Tensor<T> xhat;
    std::vector<T> invstd(c_);
    if (training) {
      xhat = Tensor<T>::like(x);
#pragma omp parallel for schedule(static)
      for (int ic = 0; ic < c_; ++ic) {
        double mean = 0;
        for (int n = 0; n < x.n; ++n) {
          const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
          for (int i = 0; i < sp; ++i) mean += p[i];
        }
        mean /= static_cast<double>(M);
        double var = 0;
        for (int n = 0; n < x.n; ++n) {
          const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
          for (int i = 0; i < sp; ++i) {
            double dd = p[i] - mean;
            var += dd * dd;
          }
        }
        var /= static_cast<double>(M);
        T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
        invstd[ic] = inv;
        run_mean_[ic] = (T(1) - momentum_) * run_mean_[ic] + momentum_ * static_cast<T>(mean);
        run_var_[ic] = (T(1) - momentum_) * run_var_[ic] + momentum_ * static_cast<T>(var);
        for (int n = 0; n < x.n; ++n) {
          const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
          T* ph = &xhat.v[xhat.index(n, ic, 0, 0, 0)];
          T* py = &y.v[y.index(n, ic, 0, 0, 0)];
          for (int i = 0; i < sp; ++i) {
            T h = static_cast<T>((p[i] - mean) * inv);
            ph[i] = h;
            py[i] = gamma_[ic] * h + beta_[ic];
          }
        }
      }
      if (tr) {
        auto& cache = tr->push();
        cache.t.push_back(std::move(xhat));
        cache.vecs.push_back(invstd);
      }
    } else {
#pragma omp parallel for schedule(static)
      for (int ic = 0; ic < c_; ++ic) {
        T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var_[ic]) +
                                               static_cast<double>(eps_)));
        for (int n = 0; n < x.n; ++n) {
          const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
          T* py = &y.v[y.index(n, ic, 0, 0, 0)];
          for (int i = 0; i < sp; ++i)
            py[i] = gamma_[ic] * (p[i] - run_mean_[ic]) * inv + beta_[ic];
        }
      }
      if (tr) throw std::logic_error("BatchNorm: backward through eval mode not supported");
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> cache = tr.pop();
    const Tensor<T>& xhat = cache.t[0];
    const std::vector<T>& invstd = cache.vecs[0];
    const int sp = dy.spatial();
    const double M = static_cast<double>(dy.n) * sp;
    Tensor<T> dx = Tensor<T>::like(dy);
#pragma omp parallel for schedule(static)
    for (int ic = 0; ic < c_; ++ic) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < dy.n; ++n) {
        const T* pdy = &dy.v[dy.index(n, ic, 0, 0, 0)];
        const T* ph = &xhat.v[xhat.index(n, ic, 0, 0, 0)];
        for (int i = 0; i < sp; ++i) {
          sum_dy += pdy[i];
          sum_dy_xhat += pdy[i] * ph[i];
        }
      }
      ggamma_[ic] += static_cast<T>(sum_dy_xhat);
      gbeta_[ic] += static_cast<T>(sum_dy);
      double k = gamma_[ic] * invstd[ic] / M;
      for (int n = 0; n < dy.n; ++n) {
        const T* pdy = &dy.v[dy.index(n, ic, 0, 0, 0)];
        const T* ph = &xhat.v[xhat.index(n, ic, 0, 0, 0)];
        T* pdx = &dx.v[dx.index(n, ic, 0, 0, 0)];
        for (int i = 0; i < sp; ++i)
          pdx[i] = static_cast<T>(k * (M * pdy[i] - sum_dy - ph[i] * sum_dy_xhat));
      }
    }
    return dx;
  }

  void params(std::vector<Param<T>>& out) override {
    out.push_back({&gamma_, &ggamma_});
    out.push_back({&beta_, &gbeta_});
  }
  void state(std::vector<std::vector<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&run_mean_);
    out.push_back(&run_var_);
  }

 private:
  int c_;
  T momentum_, eps_;
  std::vector<T> gamma_, beta_, ggamma_, gbeta_, run_mean_, run_var_;
};

template <typename T>
class InstanceNorm : public Module<T> {
 public:
  explicit InstanceNorm(int channels, T eps = T(1e-5)) : c_(channels), eps_(eps) {
    gamma_.assign(c_, T(1));
    beta_.assign(c_, T(0));
    ggamma_.assign(c_, T(0));
    gbeta_.assign(c_, T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    Tensor<T> y = Tensor<T>::like(x);
    Tensor<T> xhat = Tensor<T>::like(x);
    const int sp = x.spatial();
    std::vector<T> invstd(static_cast<size_t>(x.n) * c_);
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < x.n * c_; ++nc) {
      int n = nc / c_, ic = nc % c_;
      const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
      double mean = 0;
      for (int i = 0; i < sp; ++i) mean += p[i];
      mean /= sp;
      double var = 0;
      for (int i = 0; i < sp; ++i) {
        double dd = p[i] - mean;
        var += dd * dd;
      }
      var /= sp;
      T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      invstd[nc] = inv;
      T* ph = &xhat.v[xhat.index(n, ic, 0, 0, 0)];
      T* py = &y.v[y.index(n, ic, 0, 0, 0)];
      for (int i = 0; i < sp; ++i) {
        T h = static_cast<T>((p[i] - mean) * inv);
        ph[i] = h;
        py[i] = gamma_[ic] * h + beta_[ic];
      }
    }
    if (tr) {
      auto& cache = tr->push();
      cache.t.push_back(std::move(xhat));
      cache.vecs.push_back(invstd);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> cache = tr.pop();
    const Tensor<T>& xhat = cache.t[0];
    const std::vector<T>& invstd = cache.vecs[0];
    const int sp = dy.spatial();
    Tensor<T> dx = Tensor<T>::like(dy);
    std::vector<T> gg(c_, T(0)), gb(c_, T(0));
    for (int nc = 0; nc < dy.n * c_; ++nc) {
      int n = nc / c_, ic = nc % c_;
      const T* pdy = &dy.v[dy.index(n, ic, 0, 0, 0)];
      const T* ph = &xhat.v[xhat.index(n, ic, 0, 0, 0)];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < sp; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * ph[i];
      }
      gg[ic] += static_cast<T>(sum_dy_xhat);
      gb[ic] += static_cast<T>(sum_dy);
      double k = gamma_[ic] * invstd[nc] / sp;
      T* pdx = &dx.v[dx.index(n, ic, 0, 0, 0)];
      for (int i = 0; i < sp; ++i)
        pdx[i] = static_cast<T>(k * (sp * pdy[i] - sum_dy - ph[i] * sum_dy_xhat));
    }
    for (int ic = 0; ic < c_; ++ic) {
      ggamma_[ic] += gg[ic];
      gbeta_[ic] += gb[ic];
    }
    return dx;
  }

  void params(std::vector<Param<T>>& out) override {
    out.push_back({&gamma_, &ggamma_});
    out.push_back({&beta_, &gbeta_});
  }
  void state(std::vector<std::vector<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

 private:
  int c_;
  T eps_;
  std::vector<T> gamma_, beta_, ggamma_, gbeta_;
};

// --- activations ---------------------------------------------------------------

template <typename T>
class Relu : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    Tensor<T> y = Tensor<T>::like(x);
    for (size_t i = 0; i < x.numel(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : T(0);
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(y);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& y = c.t[0];
    Tensor<T> dx = Tensor<T>::like(dy);
    for (size_t i = 0; i < dy.numel(); ++i) dx.v[i] = y.v[i] > T(0) ? dy.v[i] : T(0);
    return dx;
  }
};

template <typename T>
class LeakyRelu : public Module<T> {
 public:
  explicit LeakyRelu(T slope = T(0.2)) : slope_(slope) {}
  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    Tensor<T> y = Tensor<T>::like(x);
    for (size_t i = 0; i < x.numel(); ++i) y.v[i] = x.v[i] > T(0) ? x.v[i] : slope_ * x.v[i];
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(x);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& x = c.t[0];
    Tensor<T> dx = Tensor<T>::like(dy);
    for (size_t i = 0; i < dy.numel(); ++i) dx.v[i] = x.v[i] > T(0) ? dy.v[i] : slope_ * dy.v[i];
    return dx;
  }

 private:
  T slope_;
};

template <typename T>
class Sigmoid : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    Tensor<T> y = Tensor<T>::like(x);
    for (size_t i = 0; i < x.numel(); ++i)
      y.v[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x.v[i]))));
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(y);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& y = c.t[0];
    Tensor<T> dx = Tensor<T>::like(dy);
    for (size_t i = 0; i < dy.numel(); ++i) dx.v[i] = dy.v[i] * y.v[i] * (T(1) - y.v[i]);
    return dx;
  }
};

// --- pooling / dense -----------------------------------------------------------

template <typename T>
class GlobalAvgPool : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    Tensor<T> y(x.n, x.c, 1, 1, 1);
    const int sp = x.spatial();
    for (int n = 0; n < x.n; ++n)
      for (int ic = 0; ic < x.c; ++ic) {
        const T* p = &x.v[x.index(n, ic, 0, 0, 0)];
        double s = 0;
        for (int i = 0; i < sp; ++i) s += p[i];
        y.at(n, ic, 0, 0, 0) = static_cast<T>(s / sp);
      }
    if (tr) {
      auto& c = tr->push();
      c.vecs.push_back({static_cast<T>(x.d), static_cast<T>(x.h), static_cast<T>(x.w)});
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    Tensor<T> dx(dy.n, dy.c, static_cast<int>(c.vecs[0][0]), static_cast<int>(c.vecs[0][1]),
                 static_cast<int>(c.vecs[0][2]));
    const int sp = dx.spatial();
    for (int n = 0; n < dy.n; ++n)
      for (int ic = 0; ic < dy.c; ++ic) {
        T g = dy.at(n, ic, 0, 0, 0) / static_cast<T>(sp);
        T* p = &dx.v[dx.index(n, ic, 0, 0, 0)];
        for (int i = 0; i < sp; ++i) p[i] = g;
      }
    return dx;
  }
};

template <typename T>
class Dense : public Module<T> {
 public:
  Dense(int in_c, int out_c) : in_c_(in_c), out_c_(out_c) {
    w_.assign(static_cast<size_t>(out_c) * in_c, T(0));
    gw_.assign(w_.size(), T(0));
    b_.assign(out_c, T(0));
    gb_.assign(out_c, T(0));
  }
  template <typename Rng>
  void init(Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in_c_));
    for (auto& x : w_) x = static_cast<T>(dist(rng));
  }
  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool) override {
    if (x.c != in_c_ || x.spatial() != 1) throw std::invalid_argument("Dense: bad input");
    Tensor<T> y(x.n, out_c_, 1, 1, 1);
    CMapMat<T> X(x.v.data(), x.n, in_c_);
    CMapMat<T> W(w_.data(), out_c_, in_c_);
    MapMat<T> Y(y.v.data(), y.n, out_c_);
    Y.noalias() = X * W.transpose();
    for (int n = 0; n < y.n; ++n)
      for (int co = 0; co < out_c_; ++co) Y(n, co) += b_[co];
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(x);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& x = c.t[0];
    Tensor<T> dx(x.n, in_c_, 1, 1, 1);
    CMapMat<T> X(x.v.data(), x.n, in_c_);
    CMapMat<T> DY(dy.v.data(), dy.n, out_c_);
    MapMat<T> GW(gw_.data(), out_c_, in_c_);
    GW.noalias() += DY.transpose() * X;
    for (int n = 0; n < dy.n; ++n)
      for (int co = 0; co < out_c_; ++co) gb_[co] += DY(n, co);
    MapMat<T> DX(dx.v.data(), dx.n, in_c_);
    CMapMat<T> W(w_.data(), out_c_, in_c_);
    DX.noalias() = DY * W;
    return dx;
  }
  void params(std::vector<Param<T>>& out) override {
    out.push_back({&w_, &gw_});
    out.push_back({&b_, &gb_});
  }
  void state(std::vector<std::vector<T>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

 private:
  int in_c_, out_c_;
  std::vector<T> w_, gw_, b_, gb_;
};

// --- composition -----------------------------------------------------------------

template <typename T>
class Sequential : public Module<T> {
 public:
  Sequential() = default;
  template <typename M, typename... Args>
  M* add(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M* raw = m.get();
    layers_.push_back(std::move(m));
    return raw;
  }
  void add_module(std::unique_ptr<Module<T>> m) { layers_.push_back(std::move(m)); }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool training) override {
    Tensor<T> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, tr, training);
    return cur;
  }
  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    Tensor<T> cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur, tr);
    return cur;
  }
  void params(std::vector<Param<T>>& out) override {
    for (auto& l : layers_) l->params(out);
  }
  void state(std::vector<std::vector<T>*>& out) override {
    for (auto& l : layers_) l->state(out);
  }

 private:
  std::vector<std::unique_ptr<Module<T>>> layers_;
};

enum class NormKind { Batch, Instance, None };

// Two 3x3(x3) convolutions with a residual connection; ReLU after the add.
template <typename T>
class ResBlock : public Module<T> {
 public:
  ResBlock(int channels, bool three_d, PadMode pad_mode, NormKind norm = NormKind::Batch)
      : norm_kind_(norm) {
    std::array<int, 3> k = three_d ? std::array<int, 3>{3, 3, 3} : std::array<int, 3>{1, 3, 3};
    std::array<int, 3> s{1, 1, 1};
    const bool bias = norm == NormKind::None;  // norms cancel a conv bias
    conv1_ = std::make_unique<Conv<T>>(channels, channels, k, s, pad_mode, bias);
    conv2_ = std::make_unique<Conv<T>>(channels, channels, k, s, pad_mode, bias);
    if (norm == NormKind::Batch) {
      n1_ = std::make_unique<BatchNorm<T>>(channels);
      n2_ = std::make_unique<BatchNorm<T>>(channels);
    } else if (norm == NormKind::Instance) {
      n1_ = std::make_unique<InstanceNorm<T>>(channels);
      n2_ = std::make_unique<InstanceNorm<T>>(channels);
    }
  }

  template <typename Rng>
  void init(Rng& rng) {
    conv1_->init(rng);
    conv2_->init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Trace<T>* tr, bool training) override {
    Tensor<T> t = conv1_->forward(x, tr, training);
    if (n1_) t = n1_->forward(t, tr, training);
    t = relu1_.forward(t, tr, training);
    t = conv2_->forward(t, tr, training);
    if (n2_) t = n2_->forward(t, tr, training);
    Tensor<T> y = Tensor<T>::like(t);
    for (size_t i = 0; i < t.numel(); ++i) {
      T s = t.v[i] + x.v[i];
      y.v[i] = s > T(0) ? s : T(0);
    }
    if (tr) {
      auto& c = tr->push();
      c.t.push_back(y);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Trace<T>& tr) override {
    LayerCache<T> c = tr.pop();
    const Tensor<T>& y = c.t[0];
    Tensor<T> dsum = Tensor<T>::like(dy);
    for (size_t i = 0; i < dy.numel(); ++i) dsum.v[i] = y.v[i] > T(0) ? dy.v[i] : T(0);
    Tensor<T> dt = dsum;
    if (n2_) dt = n2_->backward(dt, tr);
    dt = conv2_->backward(dt, tr);
    dt = relu1_.backward(dt, tr);
    if (n1_) dt = n1_->backward(dt, tr);
    dt = conv1_->backward(dt, tr);
    for (size_t i = 0; i < dt.numel(); ++i) dt.v[i] += dsum.v[i];
    return dt;
  }

  void params(std::vector<Param<T>>& out) override {
    conv1_->params(out);
    if (n1_) n1_->params(out);
    conv2_->params(out);
    if (n2_) n2_->params(out);
  }
  void state(std::vector<std::vector<T>*>& out) override {
    conv1_->state(out);
    if (n1_) n1_->state(out);
    conv2_->state(out);
    if (n2_) n2_->state(out);
  }

 private:
  NormKind norm_kind_;
  std::unique_ptr<Conv<T>> conv1_, conv2_;
  std::unique_ptr<Module<T>> n1_, n2_;
  Relu<T> relu1_;
};

// --- helpers --------------------------------------------------------------------

template <typename T>
void zero_grads(Module<T>& m) {
  std::vector<Param<T>> ps;
  m.params(ps);
  for (auto& p : ps) std::fill(p.g->begin(), p.g->end(), T(0));
}

template <typename T>
size_t param_count(Module<T>& m) {
  std::vector<Param<T>> ps;
  m.params(ps);
  size_t n = 0;
  for (auto& p : ps) n += p.w->size();
  return n;
}

// Softmax over the channel axis for (N, C, 1, 1, 1) tensors.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  Tensor<T> p = Tensor<T>::like(logits);
  for (int n = 0; n < logits.n; ++n) {
    T mx = logits.at(n, 0, 0, 0, 0);
    for (int c = 1; c < logits.c; ++c) mx = std::max(mx, logits.at(n, c, 0, 0, 0));
    double sum = 0;
    for (int c = 0; c < logits.c; ++c)
      sum += std::exp(static_cast<double>(logits.at(n, c, 0, 0, 0) - mx));
    for (int c = 0; c < logits.c; ++c)
      p.at(n, c, 0, 0, 0) =
          static_cast<T>(std::exp(static_cast<double>(logits.at(n, c, 0, 0, 0) - mx)) / sum);
  }
  return p;
}

}  // namespace cacdec::nn
