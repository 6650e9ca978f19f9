#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scenlat {

// Named views into one flat parameter vector.
class ParamLayout {
 public:
  struct Block {
    std::string name;
    std::vector<int> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    blocks_.push_back({std::move(name), std::move(shape), total_, n});
    total_ += n;
    return blocks_.back().offset;
  }

  const Block& find(const std::string& name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return b;
    throw std::out_of_range("no parameter block named " + name);
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t total() const { return total_; }

 private:
  std::vector<Block> blocks_;
  std::size_t total_ = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

template <typename T>
class Adam {
 public:
  Adam(std::size_t n, AdamOptions opt) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

  // Returns the gradient norm before clipping.
  double step(std::span<T> params, std::span<const T> grads) {
    double norm = 0.0;
    for (T g : grads) norm += static_cast<double>(g) * g;
    norm = std::sqrt(norm);
    const double clip = (opt_.grad_clip > 0.0 && norm > opt_.grad_clip) ? opt_.grad_clip / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]) * clip;
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g * g;
      const double update = opt_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opt_.eps);
      params[i] = static_cast<T>(params[i] - update);
    }
    return norm;
  }

 private:
  AdamOptions opt_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

struct TrainHyperparams {
  int epochs = 20;
  int batch_size = 64;
  double lr = 1e-3;
  double grad_clip = 0.0;
  double val_fraction = 0.2;
  unsigned long long seed = 0;
};

// Per-epoch metrics. Epoch 0 is the untrained model.
struct TrainingLog {
  struct Epoch {
    int epoch = 0;
    std::map<std::string, double> metrics;
  };
  std::vector<Epoch> epochs;
  int best_epoch = 0;
  std::string notes;

  double metric(int epoch, const std::string& key) const {
    for (const auto& e : epochs)
      if (e.epoch == epoch) {
        auto it = e.metrics.find(key);
        if (it != e.metrics.end()) return it->second;
      }
    throw std::out_of_range("no metric " + key + " for epoch " + std::to_string(epoch));
  }
};

}  // namespace scenlat
