#include "scenlat/set_losses.hpp"

#include <stdexcept>
#include <string>

#include "scenlat/hungarian.hpp"

namespace scenlat {

namespace {

double sq_dist(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

std::vector<const Feature*> valid_targets(const FrameSet& target) {
  if (target.mask.size() != target.elements.size())
    throw std::invalid_argument("set loss: target mask and element counts differ");
  std::vector<const Feature*> out;
  for (std::size_t j = 0; j < target.elements.size(); ++j)
    if (target.mask[j]) out.push_back(&target.elements[j]);
  return out;
}

void check_prediction(const SetPrediction& pred) {
  if (pred.mask.size() != pred.elements.size())
    throw std::invalid_argument("set loss: prediction mask and element counts differ");
}

SetLossGrad empty_target(const SetPrediction& pred) {
  SetLossGrad r;
  r.d_elements.assign(pred.elements.size(), Feature{0.0, 0.0, 0.0});
  r.d_mask.resize(pred.mask.size());
  for (std::size_t i = 0; i < pred.mask.size(); ++i) {
    r.value += pred.mask[i] * pred.mask[i];
    r.d_mask[i] = 2.0 * pred.mask[i];
  }
  return r;
}

void add_pull(Feature& d, double w, const Feature& x, const Feature& y) {
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += 2.0 * w * (x[k] - y[k]);
}

}  // namespace

const char* set_loss_name(SetLossKind k) { return k == SetLossKind::Chamfer ? "chamfer" : "hungarian"; }

SetLossKind parse_set_loss(const std::string& name) {
  if (name == "chamfer") return SetLossKind::Chamfer;
  if (name == "hungarian") return SetLossKind::Hungarian;
  throw std::invalid_argument("unknown set loss \"" + name + "\" (expected chamfer or hungarian)");
}

SetLossGrad chamfer_loss_grad(const SetPrediction& pred, const FrameSet& target) {
  check_prediction(pred);
  const auto ys = valid_targets(target);
  if (ys.empty()) return empty_target(pred);
  const std::size_t n = pred.elements.size();
  if (n == 0) throw std::invalid_argument("chamfer_loss: empty prediction against a non-empty target");

  SetLossGrad r;
  r.d_elements.assign(n, Feature{0.0, 0.0, 0.0});
  r.d_mask.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double d = sq_dist(pred.elements[i], *ys[0]);
    for (std::size_t j = 1; j < ys.size(); ++j) {
      const double dj = sq_dist(pred.elements[i], *ys[j]);
      if (dj < d) {
        d = dj;
        best = j;
      }
    }
    r.value += pred.mask[i] * d;
    r.d_mask[i] += d;
    add_pull(r.d_elements[i], pred.mask[i], pred.elements[i], *ys[best]);
  }
  for (const Feature* y : ys) {
    std::size_t best = 0;
    double d = sq_dist(pred.elements[0], *y);
    for (std::size_t i = 1; i < n; ++i) {
      const double di = sq_dist(pred.elements[i], *y);
      if (di < d) {
        d = di;
        best = i;
      }
    }
    r.value += d;
    add_pull(r.d_elements[best], 1.0, pred.elements[best], *y);
  }
  return r;
}

double chamfer_loss(const SetPrediction& pred, const FrameSet& target) {
  return chamfer_loss_grad(pred, target).value;
}

SetLossGrad hungarian_loss_grad(const SetPrediction& pred, const FrameSet& target) {
  check_prediction(pred);
  const auto ys = valid_targets(target);
  const int n = static_cast<int>(pred.elements.size());
  const int m = static_cast<int>(ys.size());
  if (m > n)
    throw std::invalid_argument("hungarian_loss: " + std::to_string(m) + " valid targets exceed " +
                                std::to_string(n) + " predicted elements");
  std::vector<double> cost(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost[static_cast<std::size_t>(i) * n + j] = j < m ? pred.mask[i] * sq_dist(pred.elements[i], *ys[j])
                                                        : pred.mask[i] * pred.mask[i];
  const Assignment a = solve_assignment(cost, n);

  SetLossGrad r;
  r.d_elements.assign(static_cast<std::size_t>(n), Feature{0.0, 0.0, 0.0});
  r.d_mask.assign(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    const int j = a.col_of_row[i];
    if (j < m) {
      const double d = sq_dist(pred.elements[i], *ys[j]);
      r.value += pred.mask[i] * d;
      r.d_mask[i] = d;
      add_pull(r.d_elements[i], pred.mask[i], pred.elements[i], *ys[j]);
    } else {
      r.value += pred.mask[i] * pred.mask[i];
      r.d_mask[i] = 2.0 * pred.mask[i];
    }
  }
  return r;
}

double hungarian_loss(const SetPrediction& pred, const FrameSet& target) {
  return hungarian_loss_grad(pred, target).value;
}

SetLossGrad set_loss_grad(SetLossKind kind, const SetPrediction& pred, const FrameSet& target) {
  return kind == SetLossKind::Chamfer ? chamfer_loss_grad(pred, target) : hungarian_loss_grad(pred, target);
}

}  // namespace scenlat
