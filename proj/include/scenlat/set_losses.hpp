#pragma once

#include <vector>

#include "scenlat/scenario.hpp"

namespace scenlat {

// A decoded set: candidate elements with soft presence weights.
struct SetPrediction {
  std::vector<Feature> elements;
  std::vector<double> mask;             // in [0, 1]
  std::vector<double> dspn_embedding;  // encoding of the final iterate
};

enum class SetLossKind { Chamfer, Hungarian };

const char* set_loss_name(SetLossKind k);
SetLossKind parse_set_loss(const std::string& name);

struct SetLossGrad {
  double value = 0.0;
  std::vector<Feature> d_elements;
  std::vector<double> d_mask;
};

// Predicted element i enters the prediction-to-target term weighted by its
// mask; the target-to-prediction term takes the nearest predicted element
// regardless of mask. Target slots with a false mask are ignored. An empty
// target costs sum_i mask_i^2.
double chamfer_loss(const SetPrediction& pred, const FrameSet& target);
SetLossGrad chamfer_loss_grad(const SetPrediction& pred, const FrameSet& target);

// Optimal matching of predicted elements to the valid targets padded with
// dummies up to the prediction size. A real pair costs mask_i * |x_i - y_j|^2,
// a dummy pair mask_i^2. Throws when there are more valid targets than
// predicted elements.
double hungarian_loss(const SetPrediction& pred, const FrameSet& target);
SetLossGrad hungarian_loss_grad(const SetPrediction& pred, const FrameSet& target);

SetLossGrad set_loss_grad(SetLossKind kind, const SetPrediction& pred, const FrameSet& target);

}  // namespace scenlat
