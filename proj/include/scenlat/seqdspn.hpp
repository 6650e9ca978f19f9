#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scenlat/autograd.hpp"
#include "scenlat/params.hpp"
#include "scenlat/scenario.hpp"
#include "scenlat/set_losses.hpp"

namespace scenlat {

using Embedding = std::vector<double>;

struct DSPNConfig {
  int inner_steps = 25;
  double inner_lr = 0.1;
  int n_max = 3;
  double lambda = 1.0;
  SetLossKind set_loss = SetLossKind::Chamfer;
  double init_std = 0.5;   // spread of the random initial elements
  int unroll_steps = 0;    // trailing inner steps differentiated in training; 0 = all

  void validate() const;
};

// Features are divided by these before entering the network.
struct FeatureScale {
  double x = 7.5;
  double y = 30.0;
  double v = 40.0;
};

struct SeqDSPNArch {
  int element_hidden = 8;
  int embedding = 32;
  int lstm_hidden = 64;
  int lstm_layers = 2;
  int frame_count = 13;
  double rate_hz = 2.5;
};

// Parameter groups, generic over the storage type so the same structure
// holds plain tensors and graph variables.
template <typename P>
struct SetEncoderT {
  P w1, b1, w2, b2;
  P empty;  // used when no element is present

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "fc1.weight", w1);
    f(prefix + "fc1.bias", b1);
    f(prefix + "fc2.weight", w2);
    f(prefix + "fc2.bias", b2);
    f(prefix + "empty", empty);
  }
};

template <typename P>
struct LstmLayerT {
  P wx, wh, b;  // gate order: input, forget, cell, output
};

template <typename P>
struct SeqAET {
  std::vector<LstmLayerT<P>> encoder, decoder;
  P out_w, out_b;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const std::string n = prefix + "encoder.l" + std::to_string(l) + ".";
      f(n + "wx", encoder[l].wx);
      f(n + "wh", encoder[l].wh);
      f(n + "bias", encoder[l].b);
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string n = prefix + "decoder.l" + std::to_string(l) + ".";
      f(n + "wx", decoder[l].wx);
      f(n + "wh", decoder[l].wh);
      f(n + "bias", decoder[l].b);
    }
    f(prefix + "out.weight", out_w);
    f(prefix + "out.bias", out_b);
  }
};

using SetEncoderParams = SetEncoderT<ad::Tensor>;
using SeqAEParams = SeqAET<ad::Tensor>;

struct SeqDSPNParams {
  SetEncoderParams set;
  SeqAEParams seq;

  template <typename F>
  void visit(F&& f) {
    set.visit("set.", f);
    seq.visit("seq.", f);
  }
  std::size_t count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
};

SeqDSPNParams init_seqdspn_params(const SeqDSPNArch& arch, std::uint64_t seed);

// Network view of one scenario: frame_count scaled frame sets.
std::vector<FrameSet> prepare_frames(const Scenario& s, const SeqDSPNArch& arch, int n_max,
                                     const FeatureScale& scale = {});

// Per-element two-layer map, scaled by the mask, max-pooled over elements.
Embedding set_encode(const FrameSet& f, const SetEncoderParams& p);

struct SeqAEOutput {
  std::vector<double> z;
  std::vector<Embedding> e_hat;
};
SeqAEOutput seq_autoencode(const std::vector<Embedding>& e_seq, const SeqAEParams& p);

// Gradient descent on |set_encode(elements, mask) - e_hat|^2 from a seeded
// random start.
SetPrediction dspn_decode(const Embedding& e_hat, const SetEncoderParams& enc, const DSPNConfig& cfg,
                          std::uint64_t seed);

struct SeqDSPNLoss {
  double total = 0.0;
  double set = 0.0;      // sum over frames of the set loss
  double embed = 0.0;    // lambda-weighted sum over frames of the embedding MSE
  double inner_improved = 0.0;  // fraction of frames whose inner loss decreased
  int frames = 0;
};

// Batch-mean loss at fixed parameters; `seed` fixes the inner-loop starts.
SeqDSPNLoss seqdspn_loss(const std::vector<std::vector<FrameSet>>& batch, const SeqDSPNParams& params,
                         const DSPNConfig& cfg, std::uint64_t seed);

// Same loss with its gradient in SeqDSPNParams::flatten() order,
// differentiated through the unrolled inner loop.
SeqDSPNLoss seqdspn_loss_and_grad(const std::vector<std::vector<FrameSet>>& batch, const SeqDSPNParams& params,
                                  const DSPNConfig& cfg, std::uint64_t seed, std::vector<double>& grad);

class SeqDSPN {
 public:
  SeqDSPN(const SeqDSPNArch& arch, const DSPNConfig& cfg, std::uint64_t seed, const FeatureScale& scale = {});

  const SeqDSPNArch& arch() const { return arch_; }
  const DSPNConfig& config() const { return cfg_; }
  const FeatureScale& scale() const { return scale_; }
  SeqDSPNParams& params() { return params_; }
  const SeqDSPNParams& params() const { return params_; }

  std::vector<FrameSet> frames(const Scenario& s) const { return prepare_frames(s, arch_, cfg_.n_max, scale_); }
  std::vector<double> embed(const Scenario& s) const;
  std::vector<std::vector<double>> embed(const std::vector<Scenario>& data, int batch_size = 64) const;

 private:
  SeqDSPNArch arch_;
  DSPNConfig cfg_;
  FeatureScale scale_;
  SeqDSPNParams params_;
};

struct SeqDSPNTrainResult {
  SeqDSPN model;
  TrainingLog log;
};

using SeqDSPNEpochCallback = std::function<void(const TrainingLog::Epoch&)>;

// Adam on the batch-mean loss, backpropagating through the unrolled inner
// loop. Epoch 0 holds the untrained model's validation metrics. Returns the
// parameters with the lowest validation loss. Throws on a non-finite loss.
SeqDSPNTrainResult train_seqdspn(const std::vector<Scenario>& train_set, const std::vector<Scenario>& val_set,
                                 const SeqDSPNArch& arch, const DSPNConfig& cfg, const TrainHyperparams& hp,
                                 const SeqDSPNEpochCallback& on_epoch = {}, const FeatureScale& scale = {});

}  // namespace scenlat
