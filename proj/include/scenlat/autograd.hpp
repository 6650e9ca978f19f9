#pragma once

// Small reverse-mode autodiff over row-major double matrices.
//
// Backward rules are written in terms of the same differentiable ops, so
// grad(..., create_graph = true) returns gradients that can themselves be
// differentiated. The DSPN inner loop relies on this: its gradient steps are
// part of the forward pass and the outer loss backpropagates through them.
// Exceptions: sigmoid and tanh (first-order only; they sit in the recurrent
// part which is never differentiated twice) and the custom loss ops.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace scenlat::ad {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}
  Tensor(int r, int c, std::vector<double> values);

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
};

class Var;

struct Node {
  Tensor value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Gradients for each parent given the gradient of this node.
  std::function<std::vector<Var>(const Var&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  int rows() const { return node_->value.rows; }
  int cols() const { return node_->value.cols; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;  // value of a 1 x 1 tensor
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var leaf(Tensor t);  // requires grad

bool grad_enabled();

// Disables graph recording in its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Sets graph recording for its scope; used to take inner gradients even
// when the caller disabled recording.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

// d output / d inputs for a 1 x 1 output. Only the part of the graph that
// connects output to inputs is traversed. Inputs the output does not depend
// on get zero gradients. With create_graph the results are differentiable.
std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph = false);

// elementwise, equal shapes
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// linear algebra and broadcasting
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add_row(const Var& a, const Var& row);         // a (n x c) + row (1 x c)
Var broadcast_rows(const Var& row, int n);         // (1 x c) -> (n x c)
Var sum_rows(const Var& a);                        // (n x c) -> (1 x c)
Var mul_col(const Var& a, const Var& col);         // a (n x c) * col (n x 1), per row
Var row_sum(const Var& a);                         // (n x c) -> (n x 1)
Var expand_cols(const Var& col, int c);            // (n x 1) -> (n x c)
Var sum(const Var& a);                             // -> 1 x 1
Var expand(const Var& scalar, int rows, int cols);  // 1 x 1 -> rows x cols
Var mean(const Var& a);

// Max over consecutive groups of `group` rows, per column. Ties resolve to
// the first row of the group.
Var group_max(const Var& a, int group);
// Max-position plumbing behind group_max; index[r * cols + c] is a row of the
// big tensor.
Var scatter_rows(const Var& small, std::shared_ptr<const std::vector<int>> index, int big_rows);
Var gather_rows(const Var& big, std::shared_ptr<const std::vector<int>> index);

Var slice_rows(const Var& a, int start, int count);
Var pad_rows(const Var& a, int start, int total);  // embed into zeros
Var slice_cols(const Var& a, int start, int count);
Var pad_cols(const Var& a, int start, int total);
Var concat_rows(const std::vector<Var>& parts);

// Custom op with a first-order backward computed by `backward_fn` from the
// gradient tensor; result gradients are constants.
Var custom_op(std::vector<Var> inputs, Tensor value,
              std::function<std::vector<Tensor>(const Tensor& grad_out)> backward_fn);

}  // namespace scenlat::ad
