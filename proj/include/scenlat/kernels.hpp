#pragma once

// Dense NCDHW kernels for the grid autoencoder. Each parallel kernel has a
// plain serial counterpart (suffix _reference) used by the tests and the
// benchmark; the parallel versions never reduce across threads, so their
// results do not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace scenlat::kernels {

struct Volume {
  int c = 0, d = 0, h = 0, w = 0;

  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t size() const { return static_cast<std::size_t>(c) * spatial(); }
  bool operator==(const Volume&) const = default;
};

struct Kernel3 {
  int d = 1, h = 1, w = 1;
  int volume() const { return d * h * w; }
};

// Stride-1 convolution with "same" zero padding (odd kernels).
// weight layout: [out][in][kd][kh][kw]
struct ConvGeometry {
  Volume in;
  int out_channels = 0;
  Kernel3 k;

  Volume out() const { return {out_channels, in.d, in.h, in.w}; }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in.c * k.volume();
  }
};

// ---------------------------------------------------------------------------
// convolution, serial reference

template <typename T>
void conv3d_forward_reference(const T* in, int batch, const ConvGeometry& g, const T* weight,
                              const T* bias, T* out) {
  const Volume iv = g.in;
  const int pd = g.k.d / 2, ph = g.k.h / 2, pw = g.k.w / 2;
  for (int n = 0; n < batch; ++n) {
    const T* src = in + n * iv.size();
    T* dst = out + n * g.out().size();
    for (int co = 0; co < g.out_channels; ++co)
      for (int d = 0; d < iv.d; ++d)
        for (int h = 0; h < iv.h; ++h)
          for (int w = 0; w < iv.w; ++w) {
            T acc = bias ? bias[co] : T(0);
            for (int ci = 0; ci < iv.c; ++ci)
              for (int a = 0; a < g.k.d; ++a) {
                const int dd = d + a - pd;
                if (dd < 0 || dd >= iv.d) continue;
                for (int b = 0; b < g.k.h; ++b) {
                  const int hh = h + b - ph;
                  if (hh < 0 || hh >= iv.h) continue;
                  for (int c = 0; c < g.k.w; ++c) {
                    const int ww = w + c - pw;
                    if (ww < 0 || ww >= iv.w) continue;
                    const T wv = weight[((static_cast<std::size_t>(co) * iv.c + ci) * g.k.d + a) * g.k.h * g.k.w +
                                        b * g.k.w + c];
                    acc += wv * src[((static_cast<std::size_t>(ci) * iv.d + dd) * iv.h + hh) * iv.w + ww];
                  }
                }
              }
            dst[((static_cast<std::size_t>(co) * iv.d + d) * iv.h + h) * iv.w + w] = acc;
          }
  }
}

// grad_in may be null. grad_weight / grad_bias are overwritten (bias may be null).
template <typename T>
void conv3d_backward_reference(const T* in, const T* grad_out, int batch, const ConvGeometry& g,
                               const T* weight, T* grad_in, T* grad_weight, T* grad_bias) {
  const Volume iv = g.in;
  const Volume ov = g.out();
  const int pd = g.k.d / 2, ph = g.k.h / 2, pw = g.k.w / 2;
  std::fill(grad_weight, grad_weight + g.weight_size(), T(0));
  if (grad_bias) std::fill(grad_bias, grad_bias + g.out_channels, T(0));
  if (grad_in) std::fill(grad_in, grad_in + batch * iv.size(), T(0));
  for (int n = 0; n < batch; ++n) {
    const T* src = in + n * iv.size();
    const T* go = grad_out + n * ov.size();
    T* gi = grad_in ? grad_in + n * iv.size() : nullptr;
    for (int co = 0; co < g.out_channels; ++co)
      for (int d = 0; d < iv.d; ++d)
        for (int h = 0; h < iv.h; ++h)
          for (int w = 0; w < iv.w; ++w) {
            const T gv = go[((static_cast<std::size_t>(co) * iv.d + d) * iv.h + h) * iv.w + w];
            if (grad_bias) grad_bias[co] += gv;
            for (int ci = 0; ci < iv.c; ++ci)
              for (int a = 0; a < g.k.d; ++a) {
                const int dd = d + a - pd;
                if (dd < 0 || dd >= iv.d) continue;
                for (int b = 0; b < g.k.h; ++b) {
                  const int hh = h + b - ph;
                  if (hh < 0 || hh >= iv.h) continue;
                  for (int c = 0; c < g.k.w; ++c) {
                    const int ww = w + c - pw;
                    if (ww < 0 || ww >= iv.w) continue;
                    const std::size_t wi =
                        ((static_cast<std::size_t>(co) * iv.c + ci) * g.k.d + a) * g.k.h * g.k.w + b * g.k.w + c;
                    const std::size_t ii = ((static_cast<std::size_t>(ci) * iv.d + dd) * iv.h + hh) * iv.w + ww;
                    grad_weight[wi] += gv * src[ii];
                    if (gi) gi[ii] += gv * weight[wi];
                  }
                }
              }
          }
  }
}

// ---------------------------------------------------------------------------
// convolution, direct over a zero-padded flattened volume, parallel over the batch
//
// With the input padded to (d + 2pd, h + 2ph, w + 2pw) and flattened, every
// kernel tap is a constant offset, so an output voxel whose window starts at
// flat position p reads padded[p + offset(tap)]. Outputs are computed on the
// padded index grid ("anchor" positions) and the valid ones copied out.

struct PaddedPlan {
  int pd, ph, pw;
  int dp, hp, wp;             // padded extents
  std::size_t padded;         // dp * hp * wp
  std::size_t anchors;        // d * hp * wp, enough to cover every valid output
  std::vector<std::size_t> offsets;  // per tap, (a, b, c) order

  explicit PaddedPlan(const ConvGeometry& g)
      : pd(g.k.d / 2), ph(g.k.h / 2), pw(g.k.w / 2),
        dp(g.in.d + 2 * pd), hp(g.in.h + 2 * ph), wp(g.in.w + 2 * pw),
        padded(static_cast<std::size_t>(dp) * hp * wp),
        anchors(static_cast<std::size_t>(g.in.d) * hp * wp) {
    for (int a = 0; a < g.k.d; ++a)
      for (int b = 0; b < g.k.h; ++b)
        for (int c = 0; c < g.k.w; ++c)
          offsets.push_back((static_cast<std::size_t>(a) * hp + b) * wp + c);
  }

  std::size_t anchor(int d, int h, int w) const { return (static_cast<std::size_t>(d) * hp + h) * wp + w; }
  std::size_t interior(int d, int h, int w) const { return anchor(d + pd, h + ph, w + pw); }
};

inline constexpr std::size_t kConvTile = 1024;

// Dot product with 16 fixed-order partial sums, so it vectorizes without
// reassociation flags and stays deterministic.
template <typename T>
T lane_dot(const T* a, const T* b, std::size_t len) {
  constexpr std::size_t kLanes = 16;
  T lanes[kLanes] = {};
  std::size_t p = 0;
  for (; p + kLanes <= len; p += kLanes)
    for (std::size_t j = 0; j < kLanes; ++j) lanes[j] += a[p + j] * b[p + j];
  T acc = 0;
  for (; p < len; ++p) acc += a[p] * b[p];
  for (std::size_t j = 0; j < kLanes; ++j) acc += lanes[j];
  return acc;
}

template <typename T>
void pad_volume(const T* src, const Volume& v, const PaddedPlan& plan, T* dst) {
  std::fill(dst, dst + v.c * plan.padded, T(0));
  for (int c = 0; c < v.c; ++c)
    for (int d = 0; d < v.d; ++d)
      for (int h = 0; h < v.h; ++h) {
        const T* line = src + ((static_cast<std::size_t>(c) * v.d + d) * v.h + h) * v.w;
        std::copy(line, line + v.w, dst + c * plan.padded + plan.interior(d, h, 0));
      }
}

// out_anchor is (channels x plan.anchors); non-anchor slots are zeroed.
template <typename T>
void scatter_to_anchors(const T* src, const Volume& v, const PaddedPlan& plan, T* out_anchor) {
  std::fill(out_anchor, out_anchor + v.c * plan.anchors, T(0));
  for (int c = 0; c < v.c; ++c)
    for (int d = 0; d < v.d; ++d)
      for (int h = 0; h < v.h; ++h) {
        const T* line = src + ((static_cast<std::size_t>(c) * v.d + d) * v.h + h) * v.w;
        std::copy(line, line + v.w, out_anchor + c * plan.anchors + plan.anchor(d, h, 0));
      }
}

template <typename T>
void conv3d_forward_single(const T* in, const ConvGeometry& g, const PaddedPlan& plan, const T* weight,
                           const T* bias, T* out, std::vector<T>& padded, std::vector<T>& anchor_out) {
  const Volume iv = g.in;
  const int taps = g.k.volume();
  // the last channel's shifted reads run up to one kernel offset past its end
  padded.resize(iv.c * plan.padded + plan.offsets.back());
  anchor_out.resize(g.out_channels * plan.anchors);
  pad_volume(in, iv, plan, padded.data());
  for (std::size_t s = 0; s < plan.anchors; s += kConvTile) {
    const std::size_t len = std::min(kConvTile, plan.anchors - s);
    for (int co = 0; co < g.out_channels; ++co) {
      T* acc = anchor_out.data() + co * plan.anchors + s;
      std::fill(acc, acc + len, bias ? bias[co] : T(0));
      for (int ci = 0; ci < iv.c; ++ci) {
        const T* wrow = weight + (static_cast<std::size_t>(co) * iv.c + ci) * taps;
        const T* src = padded.data() + ci * plan.padded + s;
        for (int k = 0; k < taps; ++k) {
          const T wv = wrow[k];
          const T* x = src + plan.offsets[static_cast<std::size_t>(k)];
          for (std::size_t p = 0; p < len; ++p) acc[p] += wv * x[p];
        }
      }
    }
  }
  for (int co = 0; co < g.out_channels; ++co)
    for (int d = 0; d < iv.d; ++d)
      for (int h = 0; h < iv.h; ++h) {
        const T* line = anchor_out.data() + co * plan.anchors + plan.anchor(d, h, 0);
        std::copy(line, line + iv.w, out + ((static_cast<std::size_t>(co) * iv.d + d) * iv.h + h) * iv.w);
      }
}

template <typename T>
void conv3d_forward(const T* in, int batch, const ConvGeometry& g, const T* weight, const T* bias, T* out) {
  const PaddedPlan plan(g);
#pragma omp parallel
  {
    std::vector<T> padded, anchor_out;
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n)
      conv3d_forward_single(in + n * g.in.size(), g, plan, weight, bias, out + n * g.out().size(), padded,
                            anchor_out);
  }
}

// grad_in may be null. grad_weight / grad_bias are overwritten (bias may be null).
// Per-sample weight gradients are summed in sample order after the parallel loop.
template <typename T>
void conv3d_backward(const T* in, const T* grad_out, int batch, const ConvGeometry& g, const T* weight,
                     T* grad_in, T* grad_weight, T* grad_bias) {
  const Volume iv = g.in;
  const Volume ov = g.out();
  const PaddedPlan plan(g);
  const int taps = g.k.volume();
  const std::size_t max_off = plan.offsets.back();
  const std::size_t wsize = g.weight_size();
  std::vector<T> partial(wsize * static_cast<std::size_t>(batch));
#pragma omp parallel
  {
    std::vector<T> padded(iv.c * plan.padded + max_off);
    // gradient on the anchor grid, with max_off leading zeros and enough
    // trailing zeros that every padded position can be gathered
    std::vector<T> gext(ov.c * (max_off + plan.padded));
    std::vector<T> gin_pad(iv.c * plan.padded);
    std::vector<T> ganchor(ov.c * plan.anchors);
#pragma omp for schedule(static)
    for (int n = 0; n < batch; ++n) {
      pad_volume(in + n * iv.size(), iv, plan, padded.data());
      scatter_to_anchors(grad_out + n * ov.size(), ov, plan, ganchor.data());

      T* gw = partial.data() + n * wsize;
      std::fill(gw, gw + wsize, T(0));
      for (std::size_t s = 0; s < plan.anchors; s += kConvTile) {
        const std::size_t len = std::min(kConvTile, plan.anchors - s);
        for (int co = 0; co < ov.c; ++co) {
          const T* go = ganchor.data() + co * plan.anchors + s;
          for (int ci = 0; ci < iv.c; ++ci) {
            T* wrow = gw + (static_cast<std::size_t>(co) * iv.c + ci) * taps;
            const T* src = padded.data() + ci * plan.padded + s;
            for (int k = 0; k < taps; ++k) {
              wrow[k] += lane_dot(go, src + plan.offsets[static_cast<std::size_t>(k)], len);
            }
          }
        }
      }

      if (grad_in) {
        for (int co = 0; co < ov.c; ++co) {
          T* dst = gext.data() + co * (max_off + plan.padded);
          std::fill(dst, dst + max_off, T(0));
          std::copy(ganchor.data() + co * plan.anchors, ganchor.data() + (co + 1) * plan.anchors, dst + max_off);
          std::fill(dst + max_off + plan.anchors, dst + max_off + plan.padded, T(0));
        }
        for (std::size_t s = 0; s < plan.padded; s += kConvTile) {
          const std::size_t len = std::min(kConvTile, plan.padded - s);
          for (int ci = 0; ci < iv.c; ++ci) {
            T* acc = gin_pad.data() + ci * plan.padded + s;
            std::fill(acc, acc + len, T(0));
            for (int co = 0; co < ov.c; ++co) {
              const T* wrow = weight + (static_cast<std::size_t>(co) * iv.c + ci) * taps;
              const T* src = gext.data() + co * (max_off + plan.padded) + max_off + s;
              for (int k = 0; k < taps; ++k) {
                const T wv = wrow[k];
                const T* x = src - plan.offsets[static_cast<std::size_t>(k)];
                for (std::size_t p = 0; p < len; ++p) acc[p] += wv * x[p];
              }
            }
          }
        }
        T* gi = grad_in + n * iv.size();
        for (int ci = 0; ci < iv.c; ++ci)
          for (int d = 0; d < iv.d; ++d)
            for (int h = 0; h < iv.h; ++h) {
              const T* line = gin_pad.data() + ci * plan.padded + plan.interior(d, h, 0);
              std::copy(line, line + iv.w, gi + ((static_cast<std::size_t>(ci) * iv.d + d) * iv.h + h) * iv.w);
            }
      }
    }
  }
  std::fill(grad_weight, grad_weight + wsize, T(0));
  for (int n = 0; n < batch; ++n) {
    const T* p = partial.data() + n * wsize;
    for (std::size_t i = 0; i < wsize; ++i) grad_weight[i] += p[i];
  }
  if (grad_bias) {
    std::fill(grad_bias, grad_bias + g.out_channels, T(0));
    for (int n = 0; n < batch; ++n)
      for (int co = 0; co < g.out_channels; ++co) {
        const T* go = grad_out + n * ov.size() + co * ov.spatial();
        T acc = 0;
        for (std::size_t i = 0; i < ov.spatial(); ++i) acc += go[i];
        grad_bias[co] += acc;
      }
  }
}

// ---------------------------------------------------------------------------
// max pooling with stride == window, floor semantics

inline Volume pooled(const Volume& v, const Kernel3& p) { return {v.c, v.d / p.d, v.h / p.h, v.w / p.w}; }

// indices hold the flat position of each max inside its input channel plane.
template <typename T>
void maxpool3d_forward_reference(const T* in, int batch, const Volume& iv, const Kernel3& p, T* out,
                                 std::int32_t* indices) {
  const Volume ov = pooled(iv, p);
  for (int nc = 0; nc < batch * iv.c; ++nc) {
    const T* src = in + static_cast<std::size_t>(nc) * iv.spatial();
    T* dst = out + static_cast<std::size_t>(nc) * ov.spatial();
    std::int32_t* idx = indices + static_cast<std::size_t>(nc) * ov.spatial();
    for (int d = 0; d < ov.d; ++d)
      for (int h = 0; h < ov.h; ++h)
        for (int w = 0; w < ov.w; ++w) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t best_i = -1;
          for (int a = 0; a < p.d; ++a)
            for (int b = 0; b < p.h; ++b)
              for (int c = 0; c < p.w; ++c) {
                const auto i = static_cast<std::int32_t>(((d * p.d + a) * iv.h + (h * p.h + b)) * iv.w + (w * p.w + c));
                if (best_i < 0 || src[i] > best) {
                  best = src[i];
                  best_i = i;
                }
              }
          const std::size_t o = (static_cast<std::size_t>(d) * ov.h + h) * ov.w + w;
          dst[o] = best;
          idx[o] = best_i;
        }
  }
}

template <typename T>
void maxpool3d_forward(const T* in, int batch, const Volume& iv, const Kernel3& p, T* out,
                       std::int32_t* indices) {
  const Volume ov = pooled(iv, p);
  const int planes = batch * iv.c;
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < planes; ++nc)
    maxpool3d_forward_reference(in + static_cast<std::size_t>(nc) * iv.spatial(), 1, Volume{1, iv.d, iv.h, iv.w}, p,
                                out + static_cast<std::size_t>(nc) * ov.spatial(),
                                indices + static_cast<std::size_t>(nc) * ov.spatial());
}

// Un-pooling: places each pooled value at its recorded position, zeros
// elsewhere. Also the backward pass of max pooling.
template <typename T>
void unpool3d(const T* small, const std::int32_t* indices, int batch, const Volume& big, const Kernel3& p, T* out) {
  const Volume sv = pooled(big, p);
  const int planes = batch * big.c;
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < planes; ++nc) {
    T* dst = out + static_cast<std::size_t>(nc) * big.spatial();
    std::fill(dst, dst + big.spatial(), T(0));
    const T* src = small + static_cast<std::size_t>(nc) * sv.spatial();
    const std::int32_t* idx = indices + static_cast<std::size_t>(nc) * sv.spatial();
    for (std::size_t i = 0; i < sv.spatial(); ++i) dst[idx[i]] = src[i];
  }
}

// Backward of un-pooling: gather at the recorded positions.
template <typename T>
void unpool3d_backward(const T* grad_big, const std::int32_t* indices, int batch, const Volume& big,
                       const Kernel3& p, T* grad_small) {
  const Volume sv = pooled(big, p);
  const int planes = batch * big.c;
#pragma omp parallel for schedule(static)
  for (int nc = 0; nc < planes; ++nc) {
    const T* src = grad_big + static_cast<std::size_t>(nc) * big.spatial();
    T* dst = grad_small + static_cast<std::size_t>(nc) * sv.spatial();
    const std::int32_t* idx = indices + static_cast<std::size_t>(nc) * sv.spatial();
    for (std::size_t i = 0; i < sv.spatial(); ++i) dst[i] = src[idx[i]];
  }
}

// ---------------------------------------------------------------------------
// batch normalization over (N, D, H, W) per channel

template <typename T>
struct BatchNormCache {
  std::vector<T> normalized;  // x_hat, same layout as the input
  std::vector<T> inv_std;     // per channel
};

// Training mode: batch statistics, running stats updated with `momentum`.
template <typename T>
void batchnorm_forward_train(const T* in, int batch, const Volume& v, const T* gamma, const T* beta,
                             T* running_mean, T* running_var, T momentum, T eps, T* out,
                             BatchNormCache<T>& cache) {
  const std::size_t plane = v.spatial();
  const double m = static_cast<double>(batch) * static_cast<double>(plane);
  cache.normalized.resize(static_cast<std::size_t>(batch) * v.size());
  cache.inv_std.resize(static_cast<std::size_t>(v.c));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < v.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < batch; ++n) {
      const T* x = in + n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += x[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int n = 0; n < batch; ++n) {
      const T* x = in + n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = x[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    cache.inv_std[static_cast<std::size_t>(c)] = static_cast<T>(inv);
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((in[off + i] - mean) * inv);
        cache.normalized[off + i] = xh;
        out[off + i] = gamma[c] * xh + beta[c];
      }
    }
    const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
    running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
    running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
  }
}

template <typename T>
void batchnorm_forward_eval(const T* in, int batch, const Volume& v, const T* gamma, const T* beta,
                            const T* running_mean, const T* running_var, T eps, T* out) {
  const std::size_t plane = v.spatial();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < v.c; ++c) {
    const T scale = gamma[c] / std::sqrt(running_var[c] + eps);
    const T shift = beta[c] - running_mean[c] * scale;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = in[off + i] * scale + shift;
    }
  }
}

// Backward of the training-mode transform.
template <typename T>
void batchnorm_backward(const T* grad_out, int batch, const Volume& v, const T* gamma, const BatchNormCache<T>& cache,
                        T* grad_in, T* grad_gamma, T* grad_beta) {
  const std::size_t plane = v.spatial();
  const double m = static_cast<double>(batch) * static_cast<double>(plane);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < v.c; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += static_cast<double>(grad_out[off + i]) * cache.normalized[off + i];
      }
    }
    grad_gamma[c] = static_cast<T>(sum_gx);
    grad_beta[c] = static_cast<T>(sum_g);
    const double k = static_cast<double>(gamma[c]) * cache.inv_std[static_cast<std::size_t>(c)] / m;
    for (int n = 0; n < batch; ++n) {
      const std::size_t off = n * v.size() + c * plane;
      for (std::size_t i = 0; i < plane; ++i)
        grad_in[off + i] = static_cast<T>(k * (m * grad_out[off + i] - sum_g - cache.normalized[off + i] * sum_gx));
    }
  }
}

}  // namespace scenlat::kernels
