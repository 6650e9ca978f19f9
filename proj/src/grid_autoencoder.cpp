#include "scenlat/grid_autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scenlat/rng.hpp"

namespace scenlat {

using kernels::ConvGeometry;
using kernels::Kernel3;
using kernels::Volume;

namespace {

std::string enc(int i, const char* what) { return "enc" + std::to_string(i) + "." + what; }
std::string dec(int i, const char* what) { return "dec" + std::to_string(i) + "." + what; }

template <typename T>
void relu_inplace(std::vector<T>& v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

template <typename T>
void relu_backward_inplace(std::vector<T>& grad, const std::vector<T>& act) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(act[i] > T(0))) grad[i] = T(0);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6))); }

}  // namespace

template <typename T>
GridAutoencoder<T>::GridAutoencoder(const GridConfig& cfg, std::uint64_t seed, const GridArch& arch)
    : cfg_(cfg), arch_(arch) {
  cfg_.validate();
  Volume v{cfg.n_c, cfg.d_t, cfg.d_x, cfg.d_y};
  for (int i = 0; i < 3; ++i) {
    const auto& k = arch_.conv[static_cast<std::size_t>(i)];
    if (k.d % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0)
      throw std::invalid_argument("grid autoencoder: convolution kernels must be odd");
    Stage s;
    s.in = v;
    s.conv_out = {arch_.filters[static_cast<std::size_t>(i)], v.d, v.h, v.w};
    s.pool_out = kernels::pooled(s.conv_out, arch_.pool[static_cast<std::size_t>(i)]);
    if (s.pool_out.d < 1 || s.pool_out.h < 1 || s.pool_out.w < 1)
      throw std::invalid_argument("grid autoencoder: pooling shrinks a dimension below 1 at stage " +
                                  std::to_string(i));
    stages_[static_cast<std::size_t>(i)] = s;
    v = s.pool_out;
  }

  for (int i = 0; i < 3; ++i) {
    const auto g = enc_geometry(i);
    layout_.add(enc(i, "conv.weight"), {g.out_channels, g.in.c, g.k.d, g.k.h, g.k.w});
    layout_.add(enc(i, "bn.gamma"), {g.out_channels});
    layout_.add(enc(i, "bn.beta"), {g.out_channels});
    buffer_layout_.add(enc(i, "bn.running_mean"), {g.out_channels});
    buffer_layout_.add(enc(i, "bn.running_var"), {g.out_channels});
  }
  const int flat = static_cast<int>(flat_size());
  layout_.add("bottleneck.enc.weight", {arch_.bottleneck, flat});
  layout_.add("bottleneck.enc.bias", {arch_.bottleneck});
  layout_.add("bottleneck.dec.weight", {flat, arch_.bottleneck});
  layout_.add("bottleneck.dec.bias", {flat});
  for (int i = 2; i >= 0; --i) {
    const auto g = dec_geometry(i);
    layout_.add(dec(i, "conv.weight"), {g.out_channels, g.in.c, g.k.d, g.k.h, g.k.w});
    if (i > 0) {
      layout_.add(dec(i, "bn.gamma"), {g.out_channels});
      layout_.add(dec(i, "bn.beta"), {g.out_channels});
      buffer_layout_.add(dec(i, "bn.running_mean"), {g.out_channels});
      buffer_layout_.add(dec(i, "bn.running_var"), {g.out_channels});
    } else {
      layout_.add(dec(i, "conv.bias"), {g.out_channels});
    }
  }

  params_.assign(layout_.total(), T(0));
  buffers_.assign(buffer_layout_.total(), T(0));
  Rng rng(seed);
  for (const auto& blk : layout_.blocks()) {
    T* dst = params_.data() + blk.offset;
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return blk.name.size() >= s.size() && blk.name.compare(blk.name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with("gamma")) {
      std::fill(dst, dst + blk.size, T(1));
    } else if (ends_with("conv.weight")) {
      const std::size_t fan_in = blk.size / static_cast<std::size_t>(blk.shape[0]);
      // ReLU follows every convolution except the reconstruction layer
      const double gain = blk.name == dec(0, "conv.weight") ? 3e-4 : 6.0;
      const double bound = std::sqrt(gain / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < blk.size; ++i) dst[i] = static_cast<T>(rng.uniform(-bound, bound));
    } else if (ends_with(".weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(blk.shape[0] + blk.shape[1]));
      for (std::size_t i = 0; i < blk.size; ++i) dst[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  for (const auto& blk : buffer_layout_.blocks())
    if (blk.name.ends_with("running_var")) std::fill(buffers_.begin() + static_cast<std::ptrdiff_t>(blk.offset),
                                                     buffers_.begin() + static_cast<std::ptrdiff_t>(blk.offset + blk.size), T(1));
}

template <typename T>
ConvGeometry GridAutoencoder<T>::enc_geometry(int i) const {
  const auto& s = stages_[static_cast<std::size_t>(i)];
  return {s.in, s.conv_out.c, arch_.conv[static_cast<std::size_t>(i)]};
}

// Decoder stage i undoes encoder stage i: it runs on the un-pooled volume of
// stage i and emits that stage's input channel count.
template <typename T>
ConvGeometry GridAutoencoder<T>::dec_geometry(int i) const {
  const auto& s = stages_[static_cast<std::size_t>(i)];
  return {s.conv_out, s.in.c, arch_.conv[static_cast<std::size_t>(i)]};
}

template <typename T>
typename GridAutoencoder<T>::Cache GridAutoencoder<T>::forward(std::span<const T> input, int batch, Mode mode) {
  const Volume iv = input_volume();
  if (input.size() != static_cast<std::size_t>(batch) * iv.size())
    throw std::invalid_argument("grid forward: expected " + std::to_string(batch * iv.size()) +
                                " input values, got " + std::to_string(input.size()));
  Cache c;
  c.batch = batch;
  c.mode = mode;
  const T momentum = static_cast<T>(arch_.bn_momentum);
  const T eps = static_cast<T>(arch_.bn_eps);

  std::vector<T> x(input.begin(), input.end());
  for (int i = 0; i < 3; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& st = stages_[ui];
    const auto g = enc_geometry(i);
    c.enc_in[ui] = std::move(x);
    c.enc_pre[ui].resize(batch * st.conv_out.size());
    kernels::conv3d_forward(c.enc_in[ui].data(), batch, g, p(enc(i, "conv.weight")), static_cast<const T*>(nullptr),
                            c.enc_pre[ui].data());
    c.enc_act[ui].resize(c.enc_pre[ui].size());
    if (mode == Mode::Train) {
      kernels::batchnorm_forward_train(c.enc_pre[ui].data(), batch, st.conv_out, p(enc(i, "bn.gamma")),
                                       p(enc(i, "bn.beta")), b(enc(i, "bn.running_mean")),
                                       b(enc(i, "bn.running_var")), momentum, eps, c.enc_act[ui].data(), c.enc_bn[ui]);
    } else {
      kernels::batchnorm_forward_eval(c.enc_pre[ui].data(), batch, st.conv_out, p(enc(i, "bn.gamma")),
                                      p(enc(i, "bn.beta")), b(enc(i, "bn.running_mean")),
                                      b(enc(i, "bn.running_var")), eps, c.enc_act[ui].data());
    }
    relu_inplace(c.enc_act[ui]);
    c.enc_pool[ui].resize(batch * st.pool_out.size());
    c.pool_idx[ui].resize(c.enc_pool[ui].size());
    kernels::maxpool3d_forward(c.enc_act[ui].data(), batch, st.conv_out, arch_.pool[ui], c.enc_pool[ui].data(),
                               c.pool_idx[ui].data());
    x = c.enc_pool[ui];
  }

  const auto flat = static_cast<std::ptrdiff_t>(flat_size());
  const auto width = static_cast<std::ptrdiff_t>(arch_.bottleneck);
  // Per-row dot products in a fixed order, so a sample's code does not depend
  // on its position in the batch.
  c.z.resize(static_cast<std::size_t>(batch * width));
  {
    const T* w = p("bottleneck.enc.weight");
    const T* bias = p("bottleneck.enc.bias");
    for (int n = 0; n < batch; ++n)
      for (std::ptrdiff_t j = 0; j < width; ++j)
        c.z[n * width + j] = bias[j] + kernels::lane_dot(c.enc_pool[2].data() + n * flat, w + j * flat,
                                                         static_cast<std::size_t>(flat));
  }
  c.bottleneck_out.resize(static_cast<std::size_t>(batch * flat));
  {
    const T* w = p("bottleneck.dec.weight");
    const T* bias = p("bottleneck.dec.bias");
    for (int n = 0; n < batch; ++n)
      for (std::ptrdiff_t i = 0; i < flat; ++i)
        c.bottleneck_out[n * flat + i] =
            bias[i] + kernels::lane_dot(c.z.data() + n * width, w + i * width, static_cast<std::size_t>(width));
  }

  x = c.bottleneck_out;
  for (int i = 2; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& st = stages_[ui];
    const auto g = dec_geometry(i);
    c.dec_in[ui].resize(batch * st.conv_out.size());
    kernels::unpool3d(x.data(), c.pool_idx[ui].data(), batch, st.conv_out, arch_.pool[ui], c.dec_in[ui].data());
    c.dec_pre[ui].resize(batch * st.in.size());
    if (i > 0) {
      kernels::conv3d_forward(c.dec_in[ui].data(), batch, g, p(dec(i, "conv.weight")), static_cast<const T*>(nullptr),
                              c.dec_pre[ui].data());
      c.dec_act[ui].resize(c.dec_pre[ui].size());
      if (mode == Mode::Train) {
        kernels::batchnorm_forward_train(c.dec_pre[ui].data(), batch, st.in, p(dec(i, "bn.gamma")),
                                         p(dec(i, "bn.beta")), b(dec(i, "bn.running_mean")),
                                         b(dec(i, "bn.running_var")), momentum, eps, c.dec_act[ui].data(),
                                         c.dec_bn[ui]);
      } else {
        kernels::batchnorm_forward_eval(c.dec_pre[ui].data(), batch, st.in, p(dec(i, "bn.gamma")),
                                        p(dec(i, "bn.beta")), b(dec(i, "bn.running_mean")),
                                        b(dec(i, "bn.running_var")), eps, c.dec_act[ui].data());
      }
      relu_inplace(c.dec_act[ui]);
      x = c.dec_act[ui];
    } else {
      kernels::conv3d_forward(c.dec_in[ui].data(), batch, g, p(dec(i, "conv.weight")), p(dec(i, "conv.bias")),
                              c.dec_pre[ui].data());
      c.recon = c.dec_pre[ui];
    }
  }
  return c;
}

template <typename T>
void GridAutoencoder<T>::backward(const Cache& c, std::span<const T> grad_recon, std::span<T> grad_params) const {
  if (c.mode != Mode::Train) throw std::logic_error("grid backward requires a train-mode forward pass");
  if (grad_params.size() != params_.size()) throw std::invalid_argument("grid backward: gradient size mismatch");
  const int batch = c.batch;
  auto gp = [&](const std::string& name) { return grad_params.data() + layout_.find(name).offset; };
  std::fill(grad_params.begin(), grad_params.end(), T(0));

  std::vector<T> g(grad_recon.begin(), grad_recon.end());
  std::vector<T> g_in;
  for (int i = 0; i <= 2; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& st = stages_[ui];
    const auto geo = dec_geometry(i);
    if (i > 0) {
      relu_backward_inplace(g, c.dec_act[ui]);
      std::vector<T> g_pre(g.size());
      kernels::batchnorm_backward(g.data(), batch, st.in, p(dec(i, "bn.gamma")), c.dec_bn[ui], g_pre.data(),
                                  gp(dec(i, "bn.gamma")), gp(dec(i, "bn.beta")));
      g = std::move(g_pre);
    }
    g_in.assign(batch * st.conv_out.size(), T(0));
    kernels::conv3d_backward(c.dec_in[ui].data(), g.data(), batch, geo, p(dec(i, "conv.weight")), g_in.data(),
                             gp(dec(i, "conv.weight")), i == 0 ? gp(dec(i, "conv.bias")) : static_cast<T*>(nullptr));
    g.assign(batch * st.pool_out.size(), T(0));
    kernels::unpool3d_backward(g_in.data(), c.pool_idx[ui].data(), batch, st.conv_out, arch_.pool[ui], g.data());
  }

  // Dense layers as row updates accumulated in sample order. Every output
  // element sees the same summation order whatever the buffer alignment, so
  // training is bitwise reproducible across runs.
  const std::size_t flat = flat_size();
  const auto width = static_cast<std::size_t>(arch_.bottleneck);
  const auto ub = static_cast<std::size_t>(batch);
  const auto axpy = [](T a, const T* x, T* y, std::size_t len) {
    for (std::size_t k = 0; k < len; ++k) y[k] += a * x[k];
  };
  {
    T* dw = gp("bottleneck.dec.weight");  // flat x width
    T* db = gp("bottleneck.dec.bias");
    const T* w = p("bottleneck.dec.weight");
    std::fill(dw, dw + flat * width, T(0));
    std::fill(db, db + flat, T(0));
    std::vector<T> g_z(ub * width, T(0));
    for (std::size_t n = 0; n < ub; ++n) {
      const T* gn = g.data() + n * flat;
      const T* zn = c.z.data() + n * width;
      for (std::size_t i = 0; i < flat; ++i) {
        axpy(gn[i], zn, dw + i * width, width);
        db[i] += gn[i];
        axpy(gn[i], w + i * width, g_z.data() + n * width, width);
      }
    }

    T* ew = gp("bottleneck.enc.weight");  // width x flat
    T* eb = gp("bottleneck.enc.bias");
    const T* we = p("bottleneck.enc.weight");
    std::fill(ew, ew + width * flat, T(0));
    std::fill(eb, eb + width, T(0));
    g.assign(ub * flat, T(0));
    for (std::size_t n = 0; n < ub; ++n) {
      const T* gzn = g_z.data() + n * width;
      const T* xn = c.enc_pool[2].data() + n * flat;
      for (std::size_t j = 0; j < width; ++j) {
        axpy(gzn[j], xn, ew + j * flat, flat);
        eb[j] += gzn[j];
        axpy(gzn[j], we + j * flat, g.data() + n * flat, flat);
      }
    }
  }

  for (int i = 2; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto& st = stages_[ui];
    std::vector<T> g_act(batch * st.conv_out.size());
    kernels::unpool3d(g.data(), c.pool_idx[ui].data(), batch, st.conv_out, arch_.pool[ui], g_act.data());
    relu_backward_inplace(g_act, c.enc_act[ui]);
    std::vector<T> g_pre(g_act.size());
    kernels::batchnorm_backward(g_act.data(), batch, st.conv_out, p(enc(i, "bn.gamma")), c.enc_bn[ui], g_pre.data(),
                                gp(enc(i, "bn.gamma")), gp(enc(i, "bn.beta")));
    std::vector<T> g_prev;
    if (i > 0) g_prev.resize(batch * st.in.size());
    kernels::conv3d_backward(c.enc_in[ui].data(), g_pre.data(), batch, enc_geometry(i), p(enc(i, "conv.weight")),
                             i > 0 ? g_prev.data() : static_cast<T*>(nullptr), gp(enc(i, "conv.weight")),
                             static_cast<T*>(nullptr));
    g = std::move(g_prev);
  }
}

template <typename T>
double GridAutoencoder<T>::loss_and_gradient(std::span<const T> input, std::span<const T> target, int batch,
                                             std::span<T> grad_params) {
  Cache c = forward(input, batch, Mode::Train);
  if (target.size() != c.recon.size()) throw std::invalid_argument("grid loss: target size mismatch");
  double loss = 0.0;
  std::vector<T> g(c.recon.size());
  const T scale = T(2) / static_cast<T>(batch);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const T d = c.recon[i] - target[i];
    loss += static_cast<double>(d) * d;
    g[i] = scale * d;
  }
  if (!grad_params.empty()) backward(c, g, grad_params);
  return loss / batch;
}

template <typename T>
std::vector<T> GridAutoencoder<T>::encode(std::span<const T> input, int batch) {
  // the decoder half is cheap next to the encoder convolutions; reuse forward
  return forward(input, batch, Mode::Eval).z;
}

template <typename T>
std::uint64_t GridAutoencoder<T>::branch_fingerprint(const Cache& c) {
  std::uint64_t h = 0x12345678u;
  for (int i = 0; i < 3; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    for (auto v : c.pool_idx[ui]) h = mix(h, static_cast<std::uint64_t>(v));
    for (T v : c.enc_act[ui]) h = mix(h, v > T(0));
    for (T v : c.dec_act[ui]) h = mix(h, v > T(0));
  }
  return h;
}

template class GridAutoencoder<float>;
template class GridAutoencoder<double>;

template <typename T>
void to_channels_first(const SpatioTemporalGrid& g, T* dst) {
  const std::size_t plane = static_cast<std::size_t>(g.d_t) * g.d_x * g.d_y;
  for (int t = 0; t < g.d_t; ++t)
    for (int x = 0; x < g.d_x; ++x)
      for (int y = 0; y < g.d_y; ++y) {
        const std::size_t cell = (static_cast<std::size_t>(t) * g.d_x + x) * g.d_y + y;
        for (int c = 0; c < g.n_c; ++c) dst[c * plane + cell] = static_cast<T>(g.at(t, x, y, c));
      }
}

template <typename T>
SpatioTemporalGrid from_channels_first(const T* src, int d_t, int d_x, int d_y, int n_c) {
  SpatioTemporalGrid g(d_t, d_x, d_y, n_c);
  const std::size_t plane = static_cast<std::size_t>(d_t) * d_x * d_y;
  for (int t = 0; t < d_t; ++t)
    for (int x = 0; x < d_x; ++x)
      for (int y = 0; y < d_y; ++y) {
        const std::size_t cell = (static_cast<std::size_t>(t) * d_x + x) * d_y + y;
        for (int c = 0; c < n_c; ++c) g.at(t, x, y, c) = static_cast<double>(src[c * plane + cell]);
      }
  return g;
}

template <typename T>
void prepare_grid_pair(const Scenario& s, const GridConfig& cfg, T* input, T* target) {
  const auto raw = rasterize(s, cfg);
  to_channels_first(raw, input);
  if (target) to_channels_first(smooth_target(raw, cfg), target);
}

template void to_channels_first<float>(const SpatioTemporalGrid&, float*);
template void to_channels_first<double>(const SpatioTemporalGrid&, double*);
template SpatioTemporalGrid from_channels_first<float>(const float*, int, int, int, int);
template SpatioTemporalGrid from_channels_first<double>(const double*, int, int, int, int);
template void prepare_grid_pair<float>(const Scenario&, const GridConfig&, float*, float*);
template void prepare_grid_pair<double>(const Scenario&, const GridConfig&, double*, double*);

template <typename T>
GridForwardOutput grid_forward(const SpatioTemporalGrid& g, GridAutoencoder<T>& model) {
  const auto& cfg = model.config();
  const SpatioTemporalGrid expected(cfg);
  if (!g.same_shape(expected))
    throw std::invalid_argument("grid_forward: expected shape " + expected.shape_string() + ", got " +
                                g.shape_string());
  std::vector<T> in(g.size());
  to_channels_first(g, in.data());
  auto c = model.forward(in, 1, Mode::Eval);
  GridForwardOutput out;
  out.z.assign(c.z.begin(), c.z.end());
  out.recon = from_channels_first(c.recon.data(), cfg.d_t, cfg.d_x, cfg.d_y, cfg.n_c);
  out.pool_indices = std::move(c.pool_idx);
  return out;
}

template GridForwardOutput grid_forward<float>(const SpatioTemporalGrid&, GridAutoencoder<float>&);
template GridForwardOutput grid_forward<double>(const SpatioTemporalGrid&, GridAutoencoder<double>&);

namespace {

struct GridBatch {
  std::vector<float> input, target;
};

GridBatch make_batch(const std::vector<Scenario>& data, std::span<const std::size_t> order, const GridConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(cfg.n_c) * cfg.d_t * cfg.d_x * cfg.d_y;
  GridBatch b;
  b.input.resize(order.size() * n);
  b.target.resize(order.size() * n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(order.size()); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    prepare_grid_pair(data[order[ui]], cfg, b.input.data() + ui * n, b.target.data() + ui * n);
  }
  return b;
}

}  // namespace

double evaluate_grid_loss(GridAutoencoder<float>& model, const std::vector<Scenario>& data, int batch_size) {
  if (data.empty()) throw std::invalid_argument("evaluate_grid_loss: empty data set");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(batch_size));
    auto batch = make_batch(data, std::span(order).subspan(start, count), model.config());
    auto c = model.forward(batch.input, static_cast<int>(count), Mode::Eval);
    for (std::size_t i = 0; i < c.recon.size(); ++i) {
      const double d = static_cast<double>(c.recon[i]) - batch.target[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(data.size());
}

std::vector<std::vector<double>> embed_grid(GridAutoencoder<float>& model, const std::vector<Scenario>& data,
                                            int batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto width = static_cast<std::size_t>(model.bottleneck());
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(batch_size));
    auto batch = make_batch(data, std::span(order).subspan(start, count), model.config());
    const auto z = model.encode(batch.input, static_cast<int>(count));
    for (std::size_t i = 0; i < count; ++i)
      out.emplace_back(z.begin() + static_cast<std::ptrdiff_t>(i * width),
                       z.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  }
  return out;
}

GridTrainResult train_grid_ae(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                              const GridConfig& cfg, const TrainHyperparams& hp, const EpochCallback& on_epoch) {
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train_grid_ae: empty data set");
  if (hp.batch_size < 1) throw std::invalid_argument("train_grid_ae: batch_size must be >= 1");
  GridAutoencoder<float> model(cfg, derive_seed(hp.seed, 0, 11));
  GridTrainResult result{model, {}};
  Adam<float> adam(model.params().size(), {hp.lr, 0.9, 0.999, 1e-8, hp.grad_clip});
  Rng shuffle_rng(derive_seed(hp.seed, 0, 12));

  TrainingLog& log = result.log;
  log.notes = "single-threaded deterministic kernels; float32 parameters";
  auto record = [&](int epoch, double train_loss) {
    TrainingLog::Epoch e;
    e.epoch = epoch;
    e.metrics["train_loss"] = train_loss;
    e.metrics["val_loss"] = evaluate_grid_loss(model, val_set);
    if (!std::isfinite(e.metrics["val_loss"]))
      throw std::runtime_error("grid training diverged: validation loss is not finite at epoch " +
                               std::to_string(epoch));
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
    return e.metrics["val_loss"];
  };

  double best = record(0, evaluate_grid_loss(model, train_set));
  result.model = model;
  log.best_epoch = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> grads(model.params().size());
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(hp.batch_size));
      auto batch = make_batch(train_set, std::span(order).subspan(start, count), cfg);
      const double loss = model.loss_and_gradient(batch.input, batch.target, static_cast<int>(count), grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("grid training diverged: non-finite batch loss in epoch " + std::to_string(epoch));
      adam.step(model.params(), grads);
      sum += loss * static_cast<double>(count);
    }
    const double val = record(epoch, sum / static_cast<double>(order.size()));
    if (val < best) {
      best = val;
      log.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

}  // namespace scenlat
