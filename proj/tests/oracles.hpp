#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. Each is written from the definition, with no code in
// common with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "scenlat/scenario.hpp"
#include "scenlat/set_losses.hpp"

namespace oracle {

inline double sqdist(const scenlat::Feature& a, const scenlat::Feature& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

inline std::vector<scenlat::Feature> valid_elements(const scenlat::FrameSet& t) {
  std::vector<scenlat::Feature> out;
  for (std::size_t j = 0; j < t.elements.size(); ++j)
    if (t.mask[j]) out.push_back(t.elements[j]);
  return out;
}

// Two plain loops over all pairs.
inline double chamfer(const scenlat::SetPrediction& p, const scenlat::FrameSet& t) {
  const auto targets = valid_elements(t);
  double total = 0.0;
  if (targets.empty()) {
    for (double m : p.mask) total += m * m;
    return total;
  }
  for (std::size_t i = 0; i < p.elements.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& y : targets) best = std::min(best, sqdist(p.elements[i], y));
    total += p.mask[i] * best;
  }
  for (const auto& y : targets) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : p.elements) best = std::min(best, sqdist(x, y));
    total += best;
  }
  return total;
}

// Every bijection between predicted slots and the padded target list.
inline double hungarian(const scenlat::SetPrediction& p, const scenlat::FrameSet& t) {
  const auto targets = valid_elements(t);
  const std::size_t n = p.elements.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = perm[i];
      c += j < targets.size() ? p.mask[i] * sqdist(p.elements[i], targets[j]) : p.mask[i] * p.mask[i];
    }
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// V-measure straight from probabilities: H(C|K) = -sum p(c,k) log(p(c,k)/p(k)).
inline double v_measure(const std::vector<int>& c, const std::vector<int>& k) {
  const double n = static_cast<double>(c.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pc, pk;
  for (std::size_t i = 0; i < c.size(); ++i) {
    joint[{c[i], k[i]}] += 1.0 / n;
    pc[c[i]] += 1.0 / n;
    pk[k[i]] += 1.0 / n;
  }
  double hc = 0, hk = 0, hck = 0, hkc = 0;
  for (auto& [_, p] : pc) hc -= p * std::log(p);
  for (auto& [_, p] : pk) hk -= p * std::log(p);
  for (auto& [key, p] : joint) {
    hck -= p * std::log(p / pk[key.second]);
    hkc -= p * std::log(p / pc[key.first]);
  }
  const double h = hc < 1e-15 ? 1.0 : 1.0 - hck / hc;
  const double comp = hk < 1e-15 ? 1.0 : 1.0 - hkc / hk;
  return h + comp == 0 ? 0.0 : 2 * h * comp / (h + comp);
}

// All restricted-growth strings of length n with at most `blocks` blocks.
inline void partitions(int n, int blocks, std::vector<int>& cur, const std::function<void(const std::vector<int>&)>& f) {
  if (static_cast<int>(cur.size()) == n) {
    f(cur);
    return;
  }
  const int used = cur.empty() ? 0 : *std::max_element(cur.begin(), cur.end()) + 1;
  for (int b = 0; b <= std::min(used, blocks - 1); ++b) {
    cur.push_back(b);
    partitions(n, blocks, cur, f);
    cur.pop_back();
  }
}

}  // namespace oracle
