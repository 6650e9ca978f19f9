#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scenlat/scenario.hpp"

namespace scenlat {

using Matrix = std::vector<std::vector<double>>;  // one row per point

struct EmbeddingRecord {
  std::string scenario_id;
  std::vector<double> z;
  std::optional<ClassLabel> label;

  bool operator==(const EmbeddingRecord&) const = default;
};

struct EmbeddingTable {
  std::vector<EmbeddingRecord> records;
  std::string model;        // "grid" or "seqdspn"
  std::string checkpoint;   // path the vectors came from
  std::string config_hash;

  std::size_t size() const { return records.size(); }
  int width() const { return records.empty() ? 0 : static_cast<int>(records.front().z.size()); }
  Matrix vectors() const;
  // Throws on duplicate ids or ragged widths.
  void validate() const;
  // Throws std::out_of_range naming the id.
  std::size_t index_of(const std::string& scenario_id) const;

  bool operator==(const EmbeddingTable&) const = default;
};

// Records from parallel scenario / vector lists; labels are copied through.
EmbeddingTable make_embedding_table(const std::vector<Scenario>& scenarios, const Matrix& vectors);

// Tab-separated: "#key=value" provenance lines, a header line, then
// scenario_id, label ("-" when absent), z_0 .. z_{w-1}. Numbers use the
// shortest round-trip representation.
void write_embedding_table(std::ostream& out, const EmbeddingTable& t);
void write_embedding_table(const std::filesystem::path& path, const EmbeddingTable& t);
EmbeddingTable read_embedding_table(std::istream& in);
EmbeddingTable read_embedding_table(const std::filesystem::path& path);

struct PcaResult {
  Matrix projected;
  std::vector<double> explained_ratio;  // per kept direction, non-increasing
  Matrix components;                    // dims rows of unit length
  std::vector<double> mean;
};

// Projection onto the leading eigenvectors of the sample covariance. Each
// component's largest-magnitude entry is made positive.
PcaResult pca_project(const Matrix& x, int dims);

struct Merge {
  int a = 0;  // representative point of each merged cluster
  int b = 0;
  double height = 0.0;  // sqrt of the Lance-Williams Ward distance
  int size = 0;
};

struct ClusterAssignment {
  int k = 0;
  std::vector<int> cluster;  // per point, in [0, k)
  std::vector<Merge> merges;  // full dendrogram, ascending height
};

// Agglomerative Ward clustering on Euclidean distances (nearest-neighbor
// chain), cut at k clusters. Cluster ids are numbered by smallest member
// index. Nearest-neighbor ties go to the lowest index.
ClusterAssignment hierarchical_cluster(const Matrix& x, int k);

// Most frequent label per cluster, ties to the smaller class index.
// Clusters without labeled points are absent from the result.
std::map<int, ClassLabel> majority_vote_assign(const ClusterAssignment& c,
                                               const std::vector<std::optional<ClassLabel>>& labels);

struct VMeasure {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double v = 0.0;
};

VMeasure v_measure(const std::vector<int>& labels, const std::vector<int>& clusters);

struct ClusterScore {
  VMeasure voted;      // true label vs. the cluster's majority label
  VMeasure clusters;   // true label vs. raw cluster id
  int scored = 0;      // labeled points
};

// Scores labeled points only.
ClusterScore score_clustering(const ClusterAssignment& c, const std::vector<std::optional<ClassLabel>>& labels);

struct Neighbor {
  std::string scenario_id;
  double distance = 0.0;
};

// k nearest records by Euclidean distance, excluding the query; ties by id.
std::vector<Neighbor> nearest_neighbors(const std::string& query_id, const EmbeddingTable& t, int k);

}  // namespace scenlat
