#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scenlat/grid.hpp"
#include "scenlat/kernels.hpp"
#include "scenlat/params.hpp"

namespace scenlat {

struct GridArch {
  std::array<int, 3> filters{4, 6, 8};
  std::array<kernels::Kernel3, 3> conv{{{5, 7, 7}, {3, 5, 5}, {3, 3, 3}}};
  std::array<kernels::Kernel3, 3> pool{{{2, 2, 2}, {2, 2, 2}, {1, 2, 2}}};
  int bottleneck = 64;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

enum class Mode { Train, Eval };

// 3D-convolutional autoencoder over channel-first grids [n][c][t][x][y].
// Encoder: 3 x (same-padded conv -> batch norm -> ReLU -> max pool), then an
// affine map to the bottleneck. Decoder mirrors it with an affine map back,
// un-pooling at the recorded max positions and same-padded convolutions; the
// last one has a bias and no normalization or activation.
template <typename T>
class GridAutoencoder {
 public:
  struct Stage {
    kernels::Volume in;         // input of the convolution
    kernels::Volume conv_out;   // = pool input
    kernels::Volume pool_out;
  };

  struct Cache {
    int batch = 0;
    Mode mode = Mode::Eval;
    std::array<std::vector<T>, 3> enc_in, enc_pre, enc_act, enc_pool;
    std::array<std::vector<std::int32_t>, 3> pool_idx;
    std::array<kernels::BatchNormCache<T>, 3> enc_bn;
    std::vector<T> z, bottleneck_out;
    std::array<std::vector<T>, 3> dec_in, dec_pre, dec_act;  // indexed by mirrored stage
    std::array<kernels::BatchNormCache<T>, 3> dec_bn;
    std::vector<T> recon;
  };

  GridAutoencoder(const GridConfig& cfg, std::uint64_t seed, const GridArch& arch = {});

  const GridConfig& config() const { return cfg_; }
  const GridArch& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  const ParamLayout& buffer_layout() const { return buffer_layout_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }
  std::vector<T>& buffers() { return buffers_; }
  const std::vector<T>& buffers() const { return buffers_; }
  const std::array<Stage, 3>& stages() const { return stages_; }
  kernels::Volume input_volume() const { return stages_[0].in; }
  int bottleneck() const { return arch_.bottleneck; }
  std::size_t flat_size() const { return stages_[2].pool_out.size(); }

  // Train mode normalizes with batch statistics and updates the running ones.
  Cache forward(std::span<const T> input, int batch, Mode mode);

  // grad_params is overwritten.
  void backward(const Cache& cache, std::span<const T> grad_recon, std::span<T> grad_params) const;

  // Mean over the batch of the per-sample squared-error sum. Fills grad_params
  // when non-empty. Runs in train mode.
  double loss_and_gradient(std::span<const T> input, std::span<const T> target, int batch,
                           std::span<T> grad_params);

  // Bottleneck vectors (batch x bottleneck), eval mode.
  std::vector<T> encode(std::span<const T> input, int batch);

  // Fingerprint of every discrete choice in a forward pass (ReLU signs and
  // pooling positions); equal fingerprints mean the same piecewise branch.
  static std::uint64_t branch_fingerprint(const Cache& cache);

 private:
  const T* p(const std::string& name) const { return params_.data() + layout_.find(name).offset; }
  T* b(const std::string& name) { return buffers_.data() + buffer_layout_.find(name).offset; }
  const T* b(const std::string& name) const { return buffers_.data() + buffer_layout_.find(name).offset; }
  kernels::ConvGeometry enc_geometry(int i) const;
  kernels::ConvGeometry dec_geometry(int i) const;

  GridConfig cfg_;
  GridArch arch_;
  std::array<Stage, 3> stages_;
  ParamLayout layout_;
  ParamLayout buffer_layout_;
  std::vector<T> params_;
  std::vector<T> buffers_;
};

// Channel-first conversion of one grid into dst (n_c * d_t * d_x * d_y values).
template <typename T>
void to_channels_first(const SpatioTemporalGrid& g, T* dst);
template <typename T>
SpatioTemporalGrid from_channels_first(const T* src, int d_t, int d_x, int d_y, int n_c);

// Network input (raw rasterization) and training target (smoothed occupancy).
template <typename T>
void prepare_grid_pair(const Scenario& s, const GridConfig& cfg, T* input, T* target);

struct GridForwardOutput {
  std::vector<double> z;
  SpatioTemporalGrid recon;
  std::array<std::vector<std::int32_t>, 3> pool_indices;
};

// Single-grid forward pass in eval mode. Throws on a shape mismatch.
template <typename T>
GridForwardOutput grid_forward(const SpatioTemporalGrid& g, GridAutoencoder<T>& model);

struct GridTrainResult {
  GridAutoencoder<float> model;
  TrainingLog log;
};

using EpochCallback = std::function<void(const TrainingLog::Epoch&)>;

// Minimizes the batch mean of grid_loss(target, recon) with Adam. Returns the
// parameters with the best validation loss. Throws on a non-finite loss.
GridTrainResult train_grid_ae(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                              const GridConfig& cfg, const TrainHyperparams& hp,
                              const EpochCallback& on_epoch = {});

// Mean per-sample loss over a data set, eval mode.
double evaluate_grid_loss(GridAutoencoder<float>& model, const std::vector<Scenario>& data, int batch_size = 64);

std::vector<std::vector<double>> embed_grid(GridAutoencoder<float>& model, const std::vector<Scenario>& data,
                                            int batch_size = 64);

}  // namespace scenlat
