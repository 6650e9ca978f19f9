#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scenlat/grid.hpp"
#include "scenlat/grid_autoencoder.hpp"
#include "scenlat/latent.hpp"
#include "scenlat/params.hpp"
#include "scenlat/seqdspn.hpp"
#include "scenlat/synthetic.hpp"

namespace scenlat {

// Invalid configuration or override. field() is the dotted path, e.g.
// "grid_train.lr", or empty when the problem is not tied to one field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A stage could not run, e.g. because an upstream artifact is missing.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelKind { Grid, SeqDSPN };
std::string_view model_name(ModelKind m);  // "grid" / "seqdspn"
ModelKind parse_model(std::string_view name);  // throws ConfigError

struct DatasetSpec {
  std::size_t count = 0;
  std::string id_prefix;
  GeneratorConfig generator;
};

// File names are relative to out_dir.
struct PathsConfig {
  std::string out_dir = "run";
  std::string train_data = "train.jsonl";
  std::string test_data = "test.jsonl";
  std::string grid_checkpoint = "grid.ckpt.json";
  std::string seqdspn_checkpoint = "seqdspn.ckpt.json";
  std::string plots_dir = "plots";
};

struct ExperimentConfig {
  PathsConfig paths;
  DatasetSpec train;  // used for training and validation
  DatasetSpec test;   // held-out set that is embedded, clustered and scored
  GridConfig grid;
  TrainHyperparams grid_train;
  SeqDSPNArch seqdspn_arch;
  DSPNConfig seqdspn;
  TrainHyperparams seqdspn_train;
  FeatureScale feature_scale;
  int cluster_k = 3;
  int retrieve_k = 5;
  ModelKind model = ModelKind::SeqDSPN;  // default for embed / cluster / retrieve / plot
  int plot_trajectories = 4;             // scenarios drawn when plot gets no ids

  ExperimentConfig();
  // Throws ConfigError naming the first offending field.
  void validate() const;
};

// Pretty-printed JSON of every field, keys sorted.
std::string dump_config(const ExperimentConfig& cfg);

// Starts from the defaults, overlays the JSON document, then each
// "dotted.key=value" override. Unknown fields, type mismatches and failed
// validation raise ConfigError. An empty text means "defaults only".
ExperimentConfig parse_config(std::string_view json_text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// 16 hex digits of FNV-1a over the canonical dump, paths excluded, so the
// same experiment hashes identically wherever its artifacts are written.
std::string config_hash(const ExperimentConfig& cfg);

// Checkpoints are JSON documents holding the model configuration, the flat
// parameter (and buffer) vectors, the training log and the config hash.
struct GridCheckpoint {
  GridAutoencoder<float> model;
  TrainingLog log;
  std::string config_hash;
};
struct SeqDSPNCheckpoint {
  SeqDSPN model;
  TrainingLog log;
  std::string config_hash;
};
void save_grid_checkpoint(const std::filesystem::path& path, const GridAutoencoder<float>& model,
                          const TrainingLog& log, const std::string& hash);
GridCheckpoint load_grid_checkpoint(const std::filesystem::path& path);
void save_seqdspn_checkpoint(const std::filesystem::path& path, const SeqDSPN& model, const TrainingLog& log,
                             const std::string& hash);
SeqDSPNCheckpoint load_seqdspn_checkpoint(const std::filesystem::path& path);

// Deterministic train / validation split driven by the training seed.
void split_train_val(const std::vector<Scenario>& data, double val_fraction, std::uint64_t seed,
                     std::vector<Scenario>& train, std::vector<Scenario>& val);

struct ClusterReport {
  ModelKind model = ModelKind::SeqDSPN;
  int k = 0;
  std::string config_hash;
  ClusterAssignment assignment;
  std::map<int, ClassLabel> majority;
  ClusterScore score;
  std::vector<int> sizes;
};

// Majority label among a query's neighbors, ties to the smaller class index.
// nullopt when no neighbor is labeled.
std::optional<ClassLabel> neighbor_vote(const std::vector<Neighbor>& neighbors, const EmbeddingTable& t);

enum class PlotColor { Cluster, Label };

struct ExperimentRun {
  std::uint64_t seed = 0;
  std::map<std::string, double> v_measure;  // keyed by model name
};
struct ExperimentSummary {
  std::vector<ExperimentRun> runs;
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;  // sample standard deviation
};
// Table with one "mean ± std" row per model.
std::string format_summary_table(const ExperimentSummary& s);

// One object per experiment directory. Every stage reads its inputs from and
// writes its outputs to cfg.paths.out_dir. Progress goes to `log` when set.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }

  std::filesystem::path out_dir() const;
  std::filesystem::path train_data_path() const;
  std::filesystem::path test_data_path() const;
  std::filesystem::path checkpoint_path(ModelKind m) const;
  std::filesystem::path training_log_path(ModelKind m) const;
  std::filesystem::path embeddings_path(ModelKind m) const;
  std::filesystem::path clusters_path(ModelKind m) const;
  std::filesystem::path report_path(ModelKind m) const;  // JSON; a .txt twin sits next to it
  std::filesystem::path plots_dir() const;

  // train and test data sets plus dataset_summary.json
  void generate();
  TrainingLog train(ModelKind m);
  EmbeddingTable embed(ModelKind m);
  ClusterReport cluster(ModelKind m, std::optional<int> k = std::nullopt);
  std::vector<Neighbor> retrieve(ModelKind m, const std::string& query_id, std::optional<int> k = std::nullopt);
  // Returns the files written.
  std::vector<std::filesystem::path> plot(ModelKind m, PlotColor color, const std::vector<std::string>& scenario_ids);
  // generate, then train / embed / cluster for each model.
  void run_all(const std::vector<ModelKind>& models);

 private:
  void require(const std::filesystem::path& p, std::string_view what, std::string_view stage) const;
  void note(const std::string& line) const;

  ExperimentConfig cfg_;
  std::string hash_;
  std::ostream* log_;
};

// Trains and scores every model once per seed seed_base .. seed_base+runs-1,
// each run in out_dir/run_<seed>, sharing one generated data set. Writes
// experiment.json and experiment.txt to out_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, int runs, std::uint64_t seed_base,
                                 const std::vector<ModelKind>& models, std::ostream* log = nullptr);

}  // namespace scenlat
