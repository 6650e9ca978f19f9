#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "scenlat/latent.hpp"

namespace scenlat {

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

ClusterAssignment hierarchical_cluster(const Matrix& x, int k) {
  const int n = static_cast<int>(x.size());
  if (k < 1) throw std::invalid_argument("hierarchical_cluster: k must be at least 1");
  if (k > n)
    throw std::invalid_argument("hierarchical_cluster: k = " + std::to_string(k) + " exceeds " + std::to_string(n) +
                                " points");
  const std::size_t w = x.front().size();
  for (const auto& row : x)
    if (row.size() != w) throw std::invalid_argument("hierarchical_cluster: ragged rows");

  // Squared Euclidean distances, updated in place by the Lance-Williams rule.
  const std::size_t N = static_cast<std::size_t>(n);
  std::vector<double> d(N * N, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < w; ++c) s += (x[i][c] - x[j][c]) * (x[i][c] - x[j][c]);
      d[i * N + j] = d[j * N + i] = s;
    }
  std::vector<int> size(N, 1);
  std::vector<char> active(N, 1);
  std::vector<Merge> merges;
  merges.reserve(N > 0 ? N - 1 : 0);

  std::vector<int> chain;
  int remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      for (int i = 0; i < n; ++i)
        if (active[i]) {
          chain.push_back(i);
          break;
        }
    }
    while (true) {
      const int a = chain.back();
      const int prev = chain.size() > 1 ? chain[chain.size() - 2] : -1;
      // nearest active neighbor; the previous chain element wins ties so the chain terminates
      int best = prev;
      double best_d = prev >= 0 ? d[a * N + prev] : std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j) {
        if (!active[j] || j == a) continue;
        const double dj = d[a * N + j];
        if (dj < best_d || (dj == best_d && best != prev && j < best)) {
          best_d = dj;
          best = j;
        }
      }
      if (best == prev) {
        chain.pop_back();
        chain.pop_back();
        const int lo = std::min(a, prev), hi = std::max(a, prev);
        const double dab = d[a * N + prev];
        merges.push_back({lo, hi, std::sqrt(std::max(0.0, dab)), size[lo] + size[hi]});
        for (int j = 0; j < n; ++j) {
          if (!active[j] || j == lo || j == hi) continue;
          const double ni = size[lo], nj = size[hi], nk = size[j];
          const double v = ((ni + nk) * d[lo * N + j] + (nj + nk) * d[hi * N + j] - nk * dab) / (ni + nj + nk);
          d[lo * N + j] = d[j * N + lo] = v;
        }
        size[lo] += size[hi];
        active[hi] = 0;
        --remaining;
        break;
      }
      chain.push_back(best);
    }
  }

  std::stable_sort(merges.begin(), merges.end(), [](const Merge& p, const Merge& q) { return p.height < q.height; });
  UnionFind uf(n);
  for (int m = 0; m < n - k; ++m) uf.unite(merges[m].a, merges[m].b);

  ClusterAssignment out;
  out.k = k;
  out.cluster.assign(N, -1);
  std::vector<int> id_of_root(N, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int r = uf.find(i);
    if (id_of_root[r] < 0) id_of_root[r] = next++;
    out.cluster[i] = id_of_root[r];
  }
  out.merges = std::move(merges);
  return out;
}

}  // namespace scenlat
