#include "scenlat/latent.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace scenlat {

namespace {

std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

double parse_double(const std::string& s, int line) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw std::runtime_error("embedding table line " + std::to_string(line) + ": bad number \"" + s + "\"");
  return v;
}

// Entropy of a distribution given by counts; shared by every entropy term so
// equal inputs give bit-equal results.
double entropy_of(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / total) * std::log(c / total);
  return h;
}

// H(A | B) from a table indexed [b][a].
double conditional_entropy(const std::map<int, std::map<int, double>>& by_b, double total) {
  double h = 0.0;
  for (const auto& [b, row] : by_b) {
    double nb = 0.0;
    std::vector<double> counts;
    for (const auto& [a, c] : row) {
      nb += c;
      counts.push_back(c);
    }
    h += (nb / total) * entropy_of(counts, nb);
  }
  return h;
}

}  // namespace

Matrix EmbeddingTable::vectors() const {
  Matrix out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.z);
  return out;
}

void EmbeddingTable::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.scenario_id).second)
      throw std::invalid_argument("embedding table: duplicate scenario_id \"" + r.scenario_id + "\"");
    if (static_cast<int>(r.z.size()) != width())
      throw std::invalid_argument("embedding table: record \"" + r.scenario_id + "\" has width " +
                                  std::to_string(r.z.size()) + ", expected " + std::to_string(width()));
  }
}

std::size_t EmbeddingTable::index_of(const std::string& scenario_id) const {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].scenario_id == scenario_id) return i;
  throw std::out_of_range("unknown scenario id \"" + scenario_id + "\"");
}

EmbeddingTable make_embedding_table(const std::vector<Scenario>& scenarios, const Matrix& vectors) {
  if (scenarios.size() != vectors.size())
    throw std::invalid_argument("make_embedding_table: scenario and vector counts differ");
  EmbeddingTable t;
  for (std::size_t i = 0; i < scenarios.size(); ++i)
    t.records.push_back({scenarios[i].scenario_id, vectors[i], scenarios[i].label});
  t.validate();
  return t;
}

void write_embedding_table(std::ostream& out, const EmbeddingTable& t) {
  t.validate();
  out << "#model=" << t.model << '\n';
  out << "#checkpoint=" << t.checkpoint << '\n';
  out << "#config_hash=" << t.config_hash << '\n';
  out << "scenario_id\tlabel";
  for (int j = 0; j < t.width(); ++j) out << "\tz" << j;
  out << '\n';
  for (const auto& r : t.records) {
    out << r.scenario_id << '\t' << (r.label ? class_name(*r.label) : "-");
    for (double v : r.z) out << '\t' << format_double(v);
    out << '\n';
  }
}

void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_embedding_table(out, t);
}

EmbeddingTable read_embedding_table(std::istream& in) {
  EmbeddingTable t;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(1, eq - 1), value = line.substr(eq + 1);
      if (key == "model") t.model = value;
      else if (key == "checkpoint") t.checkpoint = value;
      else if (key == "config_hash") t.config_hash = value;
      continue;
    }
    auto cols = split_tabs(line);
    if (!header) {
      if (cols.size() < 2 || cols[0] != "scenario_id")
        throw std::runtime_error("embedding table line " + std::to_string(lineno) + ": missing header");
      header = true;
      continue;
    }
    if (cols.size() < 2)
      throw std::runtime_error("embedding table line " + std::to_string(lineno) + ": too few columns");
    EmbeddingRecord r;
    r.scenario_id = cols[0];
    if (cols[1] != "-") {
      auto label = parse_class_name(cols[1]);
      if (!label)
        throw std::runtime_error("embedding table line " + std::to_string(lineno) + ": unknown label \"" + cols[1] + "\"");
      r.label = *label;
    }
    for (std::size_t j = 2; j < cols.size(); ++j) r.z.push_back(parse_double(cols[j], lineno));
    t.records.push_back(std::move(r));
  }
  t.validate();
  return t;
}

EmbeddingTable read_embedding_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_embedding_table(in);
}

PcaResult pca_project(const Matrix& x, int dims) {
  if (x.empty()) throw std::invalid_argument("pca_project: empty input");
  const int n = static_cast<int>(x.size());
  const int w = static_cast<int>(x.front().size());
  if (dims < 1 || dims > w)
    throw std::invalid_argument("pca_project: dims " + std::to_string(dims) + " outside [1, " + std::to_string(w) + "]");
  Eigen::MatrixXd X(n, w);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(x[i].size()) != w) throw std::invalid_argument("pca_project: ragged rows");
    for (int j = 0; j < w; ++j) X(i, j) = x[i][j];
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / std::max(1, n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_project: eigen decomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const double total = std::max(0.0, values.sum());

  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + w);
  Eigen::MatrixXd basis(w, dims);
  for (int d = 0; d < dims; ++d) {
    Eigen::VectorXd v = solver.eigenvectors().col(w - 1 - d);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(d) = v;
    r.components.emplace_back(v.data(), v.data() + w);
    const double lambda = std::max(0.0, values(w - 1 - d));
    r.explained_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }
  const Eigen::MatrixXd P = X * basis;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<std::size_t>(dims));
    for (int d = 0; d < dims; ++d) row[d] = P(i, d);
    r.projected.push_back(std::move(row));
  }
  return r;
}

std::map<int, ClassLabel> majority_vote_assign(const ClusterAssignment& c,
                                               const std::vector<std::optional<ClassLabel>>& labels) {
  if (labels.size() != c.cluster.size())
    throw std::invalid_argument("majority_vote_assign: label and assignment counts differ");
  std::map<int, std::array<int, kNumClasses>> votes;
  bool any = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    any = true;
    auto [it, inserted] = votes.try_emplace(c.cluster[i]);
    if (inserted) it->second.fill(0);
    ++it->second[static_cast<int>(*labels[i])];
  }
  if (!any) throw std::invalid_argument("majority_vote_assign: no labeled points");
  std::map<int, ClassLabel> out;
  for (const auto& [cluster, counts] : votes) {
    // max_element returns the first maximum, i.e. the smallest class index
    const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
    out[cluster] = static_cast<ClassLabel>(best);
  }
  return out;
}

VMeasure v_measure(const std::vector<int>& labels, const std::vector<int>& clusters) {
  if (labels.size() != clusters.size())
    throw std::invalid_argument("v_measure: " + std::to_string(labels.size()) + " labels vs " +
                                std::to_string(clusters.size()) + " cluster ids");
  if (labels.empty()) throw std::invalid_argument("v_measure: empty input");
  const double total = static_cast<double>(labels.size());
  std::map<int, std::map<int, double>> by_cluster, by_class;
  std::map<int, double> class_counts, cluster_counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_cluster[clusters[i]][labels[i]] += 1.0;
    by_class[labels[i]][clusters[i]] += 1.0;
    class_counts[labels[i]] += 1.0;
    cluster_counts[clusters[i]] += 1.0;
  }
  auto values = [](const std::map<int, double>& m) {
    std::vector<double> v;
    for (const auto& [k, c] : m) v.push_back(c);
    return v;
  };
  const double h_class = entropy_of(values(class_counts), total);
  const double h_cluster = entropy_of(values(cluster_counts), total);
  VMeasure r;
  r.homogeneity = h_class == 0.0 ? 1.0 : 1.0 - conditional_entropy(by_cluster, total) / h_class;
  r.completeness = h_cluster == 0.0 ? 1.0 : 1.0 - conditional_entropy(by_class, total) / h_cluster;
  const double s = r.homogeneity + r.completeness;
  r.v = s == 0.0 ? 0.0 : 2.0 * r.homogeneity * r.completeness / s;
  return r;
}

ClusterScore score_clustering(const ClusterAssignment& c, const std::vector<std::optional<ClassLabel>>& labels) {
  const auto vote = majority_vote_assign(c, labels);
  std::vector<int> truth, predicted, raw;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    truth.push_back(static_cast<int>(*labels[i]));
    predicted.push_back(static_cast<int>(vote.at(c.cluster[i])));
    raw.push_back(c.cluster[i]);
  }
  ClusterScore s;
  s.voted = v_measure(truth, predicted);
  s.clusters = v_measure(truth, raw);
  s.scored = static_cast<int>(truth.size());
  return s;
}

std::vector<Neighbor> nearest_neighbors(const std::string& query_id, const EmbeddingTable& t, int k) {
  const std::size_t q = t.index_of(query_id);
  if (k < 0 || static_cast<std::size_t>(k) >= t.size())
    throw std::invalid_argument("nearest_neighbors: k must be below the table size (" + std::to_string(t.size()) + ")");
  const auto& zq = t.records[q].z;
  std::vector<Neighbor> all;
  all.reserve(t.size() - 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i == q) continue;
    double d = 0.0;
    for (std::size_t j = 0; j < zq.size(); ++j) d += (t.records[i].z[j] - zq[j]) * (t.records[i].z[j] - zq[j]);
    all.push_back({t.records[i].scenario_id, std::sqrt(d)});
  }
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.scenario_id < b.scenario_id;
  };
  std::partial_sort(all.begin(), all.begin() + k, all.end(), less);
  all.resize(static_cast<std::size_t>(k));
  return all;
}

}  // namespace scenlat
