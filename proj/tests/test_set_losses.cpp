#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scenlat/hungarian.hpp"
#include "scenlat/rng.hpp"
#include "scenlat/set_losses.hpp"
#include "oracles.hpp"

using namespace scenlat;

namespace {

FrameSet make_target(const std::vector<Feature>& valid, int capacity) {
  FrameSet f;
  f.elements.assign(static_cast<std::size_t>(capacity), Feature{0.0, 0.0, 0.0});
  f.mask.assign(static_cast<std::size_t>(capacity), 0);
  for (std::size_t i = 0; i < valid.size(); ++i) {
    f.elements[i] = valid[i];
    f.mask[i] = 1;
  }
  return f;
}

Feature random_feature(Rng& rng) { return {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}; }

SetPrediction random_prediction(Rng& rng, int n, bool full_mask) {
  SetPrediction p;
  for (int i = 0; i < n; ++i) {
    p.elements.push_back(random_feature(rng));
    p.mask.push_back(full_mask ? 1.0 : rng.uniform01());
  }
  return p;
}

FrameSet random_target(Rng& rng, int capacity, int valid) {
  std::vector<Feature> v;
  for (int i = 0; i < valid; ++i) v.push_back(random_feature(rng));
  return make_target(v, capacity);
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("hand-evaluated set losses") {
  SetPrediction p{{{0.0, 0.0, 0.0}}, {1.0}, {}};
  const auto t = make_target({{3.0, 4.0, 0.0}}, 1);
  CHECK(chamfer_loss(p, t) == 50.0);
  CHECK(hungarian_loss(p, t) == 25.0);

  SetPrediction same{{{1, 2, 3}, {4, 5, 6}}, {1.0, 1.0}, {}};
  const auto ts = make_target({{1, 2, 3}, {4, 5, 6}}, 2);
  CHECK(chamfer_loss(same, ts) == 0.0);
  CHECK(hungarian_loss(same, ts) == 0.0);

  SetPrediction swapped{{{0, 0, 0}, {1, 0, 0}}, {1.0, 1.0}, {}};
  const auto tsw = make_target({{1, 0, 0}, {0, 0, 0}}, 2);
  CHECK(hungarian_loss(swapped, tsw) == 0.0);

  // empty target: the mask penalty alone
  SetPrediction masked{{{1, 1, 1}, {2, 2, 2}}, {0.5, 0.25}, {}};
  const auto empty = make_target({}, 2);
  CHECK(chamfer_loss(masked, empty) == doctest::Approx(0.3125));
  CHECK(hungarian_loss(masked, empty) == doctest::Approx(0.3125));

  // more valid targets than predicted slots cannot be matched
  SetPrediction one{{{0, 0, 0}}, {1.0}, {}};
  CHECK_THROWS_AS(hungarian_loss(one, make_target({{1, 0, 0}, {0, 1, 0}}, 2)), std::invalid_argument);

  CHECK(parse_set_loss("chamfer") == SetLossKind::Chamfer);
  CHECK(parse_set_loss("hungarian") == SetLossKind::Hungarian);
  CHECK(std::string(set_loss_name(SetLossKind::Hungarian)) == "hungarian");
  CHECK_THROWS_AS(parse_set_loss("l2"), std::invalid_argument);
}

TEST_CASE("set losses agree with brute-force oracles") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5));
    const int valid = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    const auto p = random_prediction(rng, n, rng.below(2) == 0);
    const auto t = random_target(rng, n, valid);
    CHECK(close_rel(chamfer_loss(p, t), oracle::chamfer(p, t), 1e-9));
    CHECK(close_rel(hungarian_loss(p, t), oracle::hungarian(p, t), 1e-9));
    // value returned alongside the gradient is the same number
    CHECK(chamfer_loss_grad(p, t).value == doctest::Approx(chamfer_loss(p, t)).epsilon(1e-12));
    CHECK(hungarian_loss_grad(p, t).value == doctest::Approx(hungarian_loss(p, t)).epsilon(1e-12));
  }
}

TEST_CASE("assignment solver is optimal on random square matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(6));
    std::vector<double> c(static_cast<std::size_t>(n * n));
    for (auto& v : c) v = rng.below(4) == 0 ? 1.0 : rng.uniform(0.0, 10.0);  // some repeated costs
    const auto a = solve_assignment(c, n);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += c[static_cast<std::size_t>(i * n + perm[static_cast<std::size_t>(i)])];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(a.cost == doctest::Approx(best).epsilon(1e-12));
    std::vector<int> cols = a.col_of_row;
    std::sort(cols.begin(), cols.end());
    for (int i = 0; i < n; ++i) CHECK(cols[static_cast<std::size_t>(i)] == i);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += c[static_cast<std::size_t>(i * n + a.col_of_row[static_cast<std::size_t>(i)])];
    CHECK(s == doctest::Approx(a.cost).epsilon(1e-12));
  }
}

TEST_CASE("set losses ignore element order on either side") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const int valid = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    auto p = random_prediction(rng, n, false);
    auto t = random_target(rng, n, valid);
    const double c0 = chamfer_loss(p, t), h0 = hungarian_loss(p, t);
    for (std::size_t i = p.elements.size(); i > 1; --i) {
      const auto j = rng.below(i);
      std::swap(p.elements[i - 1], p.elements[j]);
      std::swap(p.mask[i - 1], p.mask[j]);
    }
    for (std::size_t i = t.elements.size(); i > 1; --i) {
      const auto j = rng.below(i);
      std::swap(t.elements[i - 1], t.elements[j]);
      std::swap(t.mask[i - 1], t.mask[j]);
    }
    CHECK(chamfer_loss(p, t) == doctest::Approx(c0).epsilon(1e-12));
    CHECK(hungarian_loss(p, t) == doctest::Approx(h0).epsilon(1e-12));
  }
}

TEST_CASE("hungarian loss is zero exactly for coinciding multisets, chamfer is bounded by twice it") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5));
    const auto p = random_prediction(rng, n, true);
    const auto t = random_target(rng, n, n);
    const double h = hungarian_loss(p, t);
    CHECK(h > 0.0);
    CHECK(chamfer_loss(p, t) <= 2.0 * h + 1e-12);

    // a permuted copy with a duplicated element still matches perfectly
    auto copy = p.elements;
    if (n > 1) copy[1] = copy[0];
    std::vector<Feature> shuffled = copy;
    std::reverse(shuffled.begin(), shuffled.end());
    SetPrediction q{copy, std::vector<double>(static_cast<std::size_t>(n), 1.0), {}};
    CHECK(hungarian_loss(q, make_target(shuffled, n)) == 0.0);
    CHECK(chamfer_loss(q, make_target(shuffled, n)) == 0.0);
  }
}

TEST_CASE("set loss gradients match central differences") {
  Rng rng(77);
  const double eps = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const int valid = static_cast<int>(rng.below(static_cast<std::uint64_t>(n) + 1));
    const auto p = random_prediction(rng, n, false);
    const auto t = random_target(rng, n, valid);
    for (SetLossKind kind : {SetLossKind::Chamfer, SetLossKind::Hungarian}) {
      const auto g = set_loss_grad(kind, p, t);
      const auto loss = [&](const SetPrediction& q) {
        return kind == SetLossKind::Chamfer ? chamfer_loss(q, t) : hungarian_loss(q, t);
      };
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k <= 3; ++k) {
          SetPrediction plus = p, minus = p;
          double analytic;
          if (k < 3) {
            plus.elements[static_cast<std::size_t>(i)][k] += eps;
            minus.elements[static_cast<std::size_t>(i)][k] -= eps;
            analytic = g.d_elements[static_cast<std::size_t>(i)][k];
          } else {
            plus.mask[static_cast<std::size_t>(i)] += eps;
            minus.mask[static_cast<std::size_t>(i)] -= eps;
            analytic = g.d_mask[static_cast<std::size_t>(i)];
          }
          const double fd = (loss(plus) - loss(minus)) / (2 * eps);
          // a nearest-neighbour or matching switch inside the stencil
          const double mid = loss(p);
          const double curvature = std::abs(loss(plus) + loss(minus) - 2 * mid) / (eps * eps);
          if (curvature > 1e3) continue;
          ++checked;
          CHECK(std::abs(analytic - fd) <= 1e-3 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
  CHECK(checked > 500);
}
