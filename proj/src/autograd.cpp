#include "scenlat/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace scenlat::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Need = std::vector<char>;
using BackwardFn = std::function<std::vector<Var>(const Var&, const Need&)>;

// grad() publishes which parents of the node being processed need a gradient,
// so ops can skip work for the others. Empty means all.
thread_local const std::vector<char>* g_need = nullptr;

const std::vector<char>& current_need() {
  static const std::vector<char> all;
  return g_need ? *g_need : all;
}

Var make(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const Var& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = [fn = std::move(fn)](const Var& g) { return fn(g, current_need()); };
  }
  return Var(std::move(node));
}

bool needs(const Need& need, std::size_t i) { return need.empty() || need[i]; }

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  return out;
}

}  // namespace

Tensor::Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(c))
    throw std::invalid_argument("Tensor: value count does not match shape");
}

double Var::item() const {
  if (value().size() != 1) throw std::logic_error("item() on a non-scalar");
  return value().data[0];
}

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(std::move(node));
}

Var leaf(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

std::vector<Var> grad(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
  if (output.value().size() != 1) throw std::invalid_argument("grad: output must be 1 x 1");

  std::unordered_map<const Node*, int> input_pos;
  for (std::size_t i = 0; i < inputs.size(); ++i) input_pos.emplace(inputs[i].node().get(), static_cast<int>(i));

  // post-order over the tracked graph; parents precede children
  std::vector<Node*> order;
  std::unordered_map<const Node*, char> state;  // 1 = visiting, 2 = done
  std::unordered_map<const Node*, char> reaches;
  if (output.requires_grad()) {
    std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
    state[output.node().get()] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (p->requires_grad && !state.count(p)) {
          state[p] = 1;
          stack.emplace_back(p, 0);
        }
        continue;
      }
      bool r = input_pos.count(node) > 0;
      for (const auto& p : node->parents) r = r || (reaches.count(p.get()) && reaches[p.get()]);
      reaches[node] = r;
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> grads;
  const bool previous = g_grad_enabled;
  g_grad_enabled = create_graph;
  try {
    grads[output.node().get()] = constant(Tensor(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (!reaches[node] || !node->backward) continue;
      auto git = grads.find(node);
      if (git == grads.end()) continue;
      Need need(node->parents.size());
      for (std::size_t i = 0; i < need.size(); ++i) {
        const Node* p = node->parents[i].get();
        need[i] = p->requires_grad && reaches.count(p) && reaches[p];
      }
      g_need = &need;
      std::vector<Var> pg = node->backward(git->second);
      g_need = nullptr;
      if (!input_pos.count(node)) grads.erase(git);
      for (std::size_t i = 0; i < pg.size(); ++i) {
        if (!need[i] || !pg[i].defined()) continue;
        const Node* p = node->parents[i].get();
        auto [slot, inserted] = grads.try_emplace(p, pg[i]);
        if (!inserted) slot->second = add(slot->second, pg[i]);
      }
    }
  } catch (...) {
    g_need = nullptr;
    g_grad_enabled = previous;
    throw;
  }
  g_grad_enabled = previous;

  std::vector<Var> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.node().get());
    out.push_back(it != grads.end() ? it->second : constant(Tensor(in.rows(), in.cols())));
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  return make(zip(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
              [](const Var& g, const Need&) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  return make(zip(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
              [](const Var& g, const Need& n) {
                return std::vector<Var>{g, needs(n, 1) ? scale(g, -1.0) : Var()};
              });
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  return make(zip(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
              [a, b](const Var& g, const Need& n) {
                return std::vector<Var>{needs(n, 0) ? mul(g, b) : Var(), needs(n, 1) ? mul(g, a) : Var()};
              });
}

Var scale(const Var& a, double s) {
  return make(map(a.value(), [s](double x) { return s * x; }), {a},
              [s](const Var& g, const Need&) { return std::vector<Var>{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  return make(map(a.value(), [s](double x) { return x + s; }), {a},
              [](const Var& g, const Need&) { return std::vector<Var>{g}; });
}

Var square(const Var& a) {
  return make(map(a.value(), [](double x) { return x * x; }), {a},
              [a](const Var& g, const Need&) { return std::vector<Var>{mul(g, scale(a, 2.0))}; });
}

Var relu(const Var& a) {
  auto mask = map(a.value(), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
  return make(map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
              [mask = constant(std::move(mask))](const Var& g, const Need&) { return std::vector<Var>{mul(g, mask)}; });
}

Var clamp(const Var& a, double lo, double hi) {
  auto mask = map(a.value(), [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
  return make(map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), {a},
              [mask = constant(std::move(mask))](const Var& g, const Need&) { return std::vector<Var>{mul(g, mask)}; });
}

Var sigmoid(const Var& a) {
  auto y = map(a.value(), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  auto dy = map(y, [](double s) { return s * (1.0 - s); });
  return make(std::move(y), {a},
              [d = constant(std::move(dy))](const Var& g, const Need&) { return std::vector<Var>{mul(g, d)}; });
}

Var tanh(const Var& a) {
  auto y = map(a.value(), [](double x) { return std::tanh(x); });
  auto dy = map(y, [](double t) { return 1.0 - t * t; });
  return make(std::move(y), {a},
              [d = constant(std::move(dy))](const Var& g, const Need&) { return std::vector<Var>{mul(g, d)}; });
}

// ---------------------------------------------------------------------------
// linear algebra and broadcasting

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor C(A.rows, B.cols);
  // each output row depends only on its own input row, in a fixed order
  for (int i = 0; i < A.rows; ++i) {
    double* c = C.row(i);
    const double* ar = A.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double av = ar[k];
      const double* br = B.row(k);
      for (int j = 0; j < B.cols; ++j) c[j] += av * br[j];
    }
  }
  return make(std::move(C), {a, b}, [a, b](const Var& g, const Need& n) {
    return std::vector<Var>{needs(n, 0) ? matmul(g, transpose(b)) : Var(),
                            needs(n, 1) ? matmul(transpose(a), g) : Var()};
  });
}

Var transpose(const Var& a) {
  const Tensor& A = a.value();
  Tensor T(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
  return make(std::move(T), {a}, [](const Var& g, const Need&) { return std::vector<Var>{transpose(g)}; });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tensor out = a.value();
  const double* r = row.value().data.data();
  for (int i = 0; i < out.rows; ++i) {
    double* o = out.row(i);
    for (int j = 0; j < out.cols; ++j) o[j] += r[j];
  }
  return make(std::move(out), {a, row}, [](const Var& g, const Need& n) {
    return std::vector<Var>{g, needs(n, 1) ? sum_rows(g) : Var()};
  });
}

Var broadcast_rows(const Var& row, int n) {
  if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expects a single row");
  Tensor out(n, row.cols());
  for (int i = 0; i < n; ++i) std::copy(row.value().data.begin(), row.value().data.end(), out.row(i));
  return make(std::move(out), {row}, [](const Var& g, const Need&) { return std::vector<Var>{sum_rows(g)}; });
}

Var sum_rows(const Var& a) {
  const Tensor& A = a.value();
  Tensor out(1, A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) out.data[static_cast<std::size_t>(j)] += A(i, j);
  const int n = A.rows;
  return make(std::move(out), {a}, [n](const Var& g, const Need&) { return std::vector<Var>{broadcast_rows(g, n)}; });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  Tensor out = a.value();
  for (int i = 0; i < out.rows; ++i) {
    const double s = col.value().data[static_cast<std::size_t>(i)];
    double* o = out.row(i);
    for (int j = 0; j < out.cols; ++j) o[j] *= s;
  }
  return make(std::move(out), {a, col}, [a, col](const Var& g, const Need& n) {
    return std::vector<Var>{needs(n, 0) ? mul_col(g, col) : Var(), needs(n, 1) ? row_sum(mul(g, a)) : Var()};
  });
}

Var row_sum(const Var& a) {
  const Tensor& A = a.value();
  Tensor out(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += A(i, j);
    out.data[static_cast<std::size_t>(i)] = s;
  }
  const int c = A.cols;
  return make(std::move(out), {a}, [c](const Var& g, const Need&) { return std::vector<Var>{expand_cols(g, c)}; });
}

Var expand_cols(const Var& col, int c) {
  if (col.cols() != 1) throw std::invalid_argument("expand_cols: expects a column");
  Tensor out(col.rows(), c);
  for (int i = 0; i < out.rows; ++i) std::fill(out.row(i), out.row(i) + c, col.value().data[static_cast<std::size_t>(i)]);
  return make(std::move(out), {col}, [](const Var& g, const Need&) { return std::vector<Var>{row_sum(g)}; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const int r = a.rows(), c = a.cols();
  return make(Tensor(1, 1, s), {a}, [r, c](const Var& g, const Need&) { return std::vector<Var>{expand(g, r, c)}; });
}

Var expand(const Var& scalar, int rows, int cols) {
  if (scalar.value().size() != 1) throw std::invalid_argument("expand: expects a 1 x 1 tensor");
  return make(Tensor(rows, cols, scalar.value().data[0]), {scalar},
              [](const Var& g, const Need&) { return std::vector<Var>{sum(g)}; });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var group_max(const Var& a, int group) {
  const Tensor& A = a.value();
  if (group < 1 || A.rows % group != 0) throw std::invalid_argument("group_max: rows not divisible by group");
  const int groups = A.rows / group;
  Tensor out(groups, A.cols);
  auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(groups) * A.cols);
  for (int gi = 0; gi < groups; ++gi)
    for (int j = 0; j < A.cols; ++j) {
      int best = gi * group;
      for (int r = gi * group + 1; r < (gi + 1) * group; ++r)
        if (A(r, j) > A(best, j)) best = r;
      out(gi, j) = A(best, j);
      (*index)[static_cast<std::size_t>(gi) * A.cols + j] = best;
    }
  const int rows = A.rows;
  return make(std::move(out), {a}, [index = std::shared_ptr<const std::vector<int>>(index), rows](const Var& g, const Need&) {
    return std::vector<Var>{scatter_rows(g, index, rows)};
  });
}

Var scatter_rows(const Var& small, std::shared_ptr<const std::vector<int>> index, int big_rows) {
  const Tensor& S = small.value();
  Tensor out(big_rows, S.cols);
  for (int r = 0; r < S.rows; ++r)
    for (int j = 0; j < S.cols; ++j) out((*index)[static_cast<std::size_t>(r) * S.cols + j], j) += S(r, j);
  return make(std::move(out), {small}, [index](const Var& g, const Need&) {
    return std::vector<Var>{gather_rows(g, index)};
  });
}

Var gather_rows(const Var& big, std::shared_ptr<const std::vector<int>> index) {
  const Tensor& B = big.value();
  const int rows = static_cast<int>(index->size()) / B.cols;
  Tensor out(rows, B.cols);
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < B.cols; ++j) out(r, j) = B((*index)[static_cast<std::size_t>(r) * B.cols + j], j);
  const int big_rows = B.rows;
  return make(std::move(out), {big}, [index, big_rows](const Var& g, const Need&) {
    return std::vector<Var>{scatter_rows(g, index, big_rows)};
  });
}

Var slice_rows(const Var& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  const Tensor& A = a.value();
  Tensor out(count, A.cols);
  std::copy(A.row(start), A.row(start) + static_cast<std::size_t>(count) * A.cols, out.data.begin());
  const int total = A.rows;
  return make(std::move(out), {a}, [start, total](const Var& g, const Need&) {
    return std::vector<Var>{pad_rows(g, start, total)};
  });
}

Var pad_rows(const Var& a, int start, int total) {
  if (start < 0 || start + a.rows() > total) throw std::invalid_argument("pad_rows: out of range");
  const Tensor& A = a.value();
  Tensor out(total, A.cols);
  std::copy(A.data.begin(), A.data.end(), out.row(start));
  const int count = A.rows;
  return make(std::move(out), {a}, [start, count](const Var& g, const Need&) {
    return std::vector<Var>{slice_rows(g, start, count)};
  });
}

Var slice_cols(const Var& a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const Tensor& A = a.value();
  Tensor out(A.rows, count);
  for (int i = 0; i < A.rows; ++i) std::copy(A.row(i) + start, A.row(i) + start + count, out.row(i));
  const int total = A.cols;
  return make(std::move(out), {a}, [start, total](const Var& g, const Need&) {
    return std::vector<Var>{pad_cols(g, start, total)};
  });
}

Var pad_cols(const Var& a, int start, int total) {
  if (start < 0 || start + a.cols() > total) throw std::invalid_argument("pad_cols: out of range");
  const Tensor& A = a.value();
  Tensor out(A.rows, total);
  for (int i = 0; i < A.rows; ++i) std::copy(A.row(i), A.row(i) + A.cols, out.row(i) + start);
  const int count = A.cols;
  return make(std::move(out), {a}, [start, count](const Var& g, const Need&) {
    return std::vector<Var>{slice_cols(g, start, count)};
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int cols = parts.front().cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<int> starts;
  int at = 0;
  for (const auto& p : parts) {
    starts.push_back(at);
    std::copy(p.value().data.begin(), p.value().data.end(), out.row(at));
    at += p.rows();
  }
  std::vector<int> counts;
  for (const auto& p : parts) counts.push_back(p.rows());
  return make(std::move(out), parts, [starts, counts](const Var& g, const Need& n) {
    std::vector<Var> gs(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i)
      if (needs(n, i)) gs[i] = slice_rows(g, starts[i], counts[i]);
    return gs;
  });
}

Var custom_op(std::vector<Var> inputs, Tensor value,
              std::function<std::vector<Tensor>(const Tensor& grad_out)> backward_fn) {
  return make(std::move(value), inputs, [backward_fn = std::move(backward_fn)](const Var& g, const Need&) {
    auto ts = backward_fn(g.value());
    std::vector<Var> out;
    out.reserve(ts.size());
    for (auto& t : ts) out.push_back(t.size() ? constant(std::move(t)) : Var());
    return out;
  });
}

}  // namespace scenlat::ad
