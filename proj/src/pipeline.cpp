#include "scenlat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "scenlat/rng.hpp"
#include "scenlat/scenario_io.hpp"
#include "scenlat/svg_plot.hpp"

namespace scenlat {

using nlohmann::json;
namespace fs = std::filesystem;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpeedRange, lo, hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorConfig, rng_seed, class_mix, lane_width, noise_std, duration,
                                                sample_rate_hz, keep_right, ego_speed, overtake_rel_speed, leading_rel_speed_max,
                                                leading_gap, random_rel_speed, random_extent_y,
                                                random_max_participants)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GridConfig, d_t, d_x, d_y, n_c, rate_hz, lateral_extent,
                                                longitudinal_extent, velocity_scale, kernel_size, kernel_sigma)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainHyperparams, epochs, batch_size, lr, grad_clip, val_fraction,
                                                seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SeqDSPNArch, element_hidden, embedding, lstm_hidden, lstm_layers,
                                                frame_count, rate_hz)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeatureScale, x, y, v)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSpec, count, id_prefix, generator)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, out_dir, train_data, test_data, grid_checkpoint,
                                                seqdspn_checkpoint, plots_dir)

void to_json(json& j, const DSPNConfig& c) {
  j = json{{"inner_steps", c.inner_steps}, {"inner_lr", c.inner_lr},     {"n_max", c.n_max},
           {"lambda", c.lambda},           {"set_loss", set_loss_name(c.set_loss)}, {"init_std", c.init_std},
           {"unroll_steps", c.unroll_steps}};
}
void from_json(const json& j, DSPNConfig& c) {
  c.inner_steps = j.at("inner_steps").get<int>();
  c.inner_lr = j.at("inner_lr").get<double>();
  c.n_max = j.at("n_max").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.unroll_steps = j.at("unroll_steps").get<int>();
  try {
    c.set_loss = parse_set_loss(j.at("set_loss").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("seqdspn.set_loss", e.what());
  }
}

void to_json(json& j, const TrainingLog& log) {
  json epochs = json::array();
  for (const auto& e : log.epochs) epochs.push_back({{"epoch", e.epoch}, {"metrics", e.metrics}});
  j = json{{"best_epoch", log.best_epoch}, {"notes", log.notes}, {"epochs", std::move(epochs)}};
}
void from_json(const json& j, TrainingLog& log) {
  log.best_epoch = j.at("best_epoch").get<int>();
  log.notes = j.at("notes").get<std::string>();
  log.epochs.clear();
  for (const auto& e : j.at("epochs"))
    log.epochs.push_back({e.at("epoch").get<int>(), e.at("metrics").get<std::map<std::string, double>>()});
}

std::string_view model_name(ModelKind m) { return m == ModelKind::Grid ? "grid" : "seqdspn"; }

ModelKind parse_model(std::string_view name) {
  if (name == "grid") return ModelKind::Grid;
  if (name == "seqdspn") return ModelKind::SeqDSPN;
  throw ConfigError("model", "expected \"grid\" or \"seqdspn\", got \"" + std::string(name) + "\"");
}

ExperimentConfig::ExperimentConfig() {
  train.count = 2000;
  train.id_prefix = "train";
  train.generator.rng_seed = 1;
  test.count = 3000;
  test.id_prefix = "test";
  test.generator = imbalanced_labeled_config(2);
  train.generator.keep_right = true;
  test.generator.keep_right = true;

  grid_train.epochs = 30;
  grid_train.batch_size = 32;

  seqdspn_train.epochs = 30;
  seqdspn_train.batch_size = 32;
  seqdspn_train.grad_clip = 1.0;
  seqdspn.lambda = 30.0;
}

namespace {

json to_json_doc(const ExperimentConfig& c) {
  return json{{"paths", c.paths},
              {"train", c.train},
              {"test", c.test},
              {"grid", c.grid},
              {"grid_train", c.grid_train},
              {"seqdspn_arch", c.seqdspn_arch},
              {"seqdspn", c.seqdspn},
              {"seqdspn_train", c.seqdspn_train},
              {"feature_scale", c.feature_scale},
              {"cluster_k", c.cluster_k},
              {"retrieve_k", c.retrieve_k},
              {"model", std::string(model_name(c.model))},
              {"plot_trajectories", c.plot_trajectories}};
}

ExperimentConfig from_json_doc(const json& j) {
  ExperimentConfig c;
  j.at("paths").get_to(c.paths);
  j.at("train").get_to(c.train);
  j.at("test").get_to(c.test);
  j.at("grid").get_to(c.grid);
  j.at("grid_train").get_to(c.grid_train);
  j.at("seqdspn_arch").get_to(c.seqdspn_arch);
  j.at("seqdspn").get_to(c.seqdspn);
  j.at("seqdspn_train").get_to(c.seqdspn_train);
  j.at("feature_scale").get_to(c.feature_scale);
  c.cluster_k = j.at("cluster_k").get<int>();
  c.retrieve_k = j.at("retrieve_k").get<int>();
  c.model = parse_model(j.at("model").get<std::string>());
  c.plot_trajectories = j.at("plot_trajectories").get<int>();
  return c;
}

std::string type_word(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Replaces dst (a default value) by src after checking that src has a
// compatible type. Objects merge key by key; unknown keys are errors.
void overlay(json& dst, const json& src, const std::string& path) {
  const auto fail = [&](const std::string& what) { throw ConfigError(path, what); };
  if (dst.is_object()) {
    if (!src.is_object()) fail("expected an object, got " + type_word(src));
    for (auto it = src.begin(); it != src.end(); ++it) {
      const std::string sub = path.empty() ? it.key() : path + "." + it.key();
      if (!dst.contains(it.key())) throw ConfigError(sub, "unknown field");
      overlay(dst[it.key()], it.value(), sub);
    }
    return;
  }
  if (dst.is_array()) {
    if (!src.is_array()) fail("expected an array, got " + type_word(src));
    if (src.size() != dst.size())
      fail("expected " + std::to_string(dst.size()) + " entries, got " + std::to_string(src.size()));
    for (std::size_t i = 0; i < src.size(); ++i) overlay(dst[i], src[i], path + "[" + std::to_string(i) + "]");
    return;
  }
  if (dst.is_number_unsigned()) {
    if (src.is_number_unsigned()) {
      dst = src;
      return;
    }
    if (src.is_number_integer()) fail("expected a non-negative integer, got " + src.dump());
    fail("expected a non-negative integer, got " + type_word(src));
  }
  if (dst.is_number_integer()) {
    if (!src.is_number_integer()) fail("expected an integer, got " + type_word(src));
  } else if (dst.is_number()) {
    if (!src.is_number()) fail("expected a number, got " + type_word(src));
  } else if (dst.is_string()) {
    if (!src.is_string()) fail("expected a string, got " + type_word(src));
  } else if (dst.is_boolean()) {
    if (!src.is_boolean()) fail("expected a boolean, got " + type_word(src));
  }
  dst = src;
}

void apply_override(json& doc, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("", "override \"" + item + "\" is not of the form key=value");
  const std::string key = item.substr(0, eq);
  const std::string text = item.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;  // bare words are strings

  // Build the nested patch {"a": {"b": value}} and overlay it.
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw ConfigError(key, "empty path component");
    parts.push_back(p);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, std::move(patch)}};
  overlay(doc, patch, "");
}

void check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

// Runs a module's own validate() and reports its complaint under `field`.
template <typename F>
void validate_section(const std::string& field, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    const auto leaf = field.substr(field.rfind('.') + 1);
    for (const std::string& prefix : {leaf + ": ", std::string("dspn: ")})
      if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    throw ConfigError(field, msg);
  }
}

void validate_hp(const TrainHyperparams& hp, const std::string& f) {
  check(hp.epochs >= 0, f + ".epochs", "must be non-negative");
  check(hp.batch_size >= 1, f + ".batch_size", "must be at least 1");
  check(hp.lr >= 0.0 && std::isfinite(hp.lr), f + ".lr", "must be a finite non-negative number");
  check(hp.grad_clip >= 0.0, f + ".grad_clip", "must be non-negative");
  check(hp.val_fraction > 0.0 && hp.val_fraction < 1.0, f + ".val_fraction", "must lie in (0, 1)");
}

void validate_dataset(const DatasetSpec& d, const std::string& f) {
  check(d.count >= 1, f + ".count", "must be at least 1");
  check(!d.id_prefix.empty(), f + ".id_prefix", "must not be empty");
  validate_section(f + ".generator", [&] { d.generator.validate(); });
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw StageError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw StageError("cannot write " + p.string());
  out << text;
  if (!out) throw StageError("error while writing " + p.string());
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw StageError(p.string() + ": not valid JSON (" + e.what() + ")");
  }
}

// Inserts a provenance comment right after the opening <svg ...> tag.
std::string stamp_svg(std::string svg, const std::string& hash) {
  const auto open = svg.find("<svg");
  const auto end = open == std::string::npos ? std::string::npos : svg.find('>', open);
  const std::string comment = "<!-- config_hash=" + hash + " -->\n";
  if (end == std::string::npos) return comment + svg;
  svg.insert(end + 1, "\n" + comment.substr(0, comment.size() - 1));
  return svg;
}

std::string summary_json(const DatasetSummary& s) {
  json per_kind = json::object();
  for (int k = 0; k < kNumKinds; ++k)
    per_kind[std::string(kind_name(static_cast<ScenarioKind>(k)))] = s.per_kind[static_cast<std::size_t>(k)];
  return json{{"total", s.total}, {"per_kind", per_kind}}.dump();
}

}  // namespace

void ExperimentConfig::validate() const {
  check(!paths.out_dir.empty(), "paths.out_dir", "must not be empty");
  for (const auto& [name, value] : {std::pair<const char*, const std::string&>{"train_data", paths.train_data},
                                    {"test_data", paths.test_data},
                                    {"grid_checkpoint", paths.grid_checkpoint},
                                    {"seqdspn_checkpoint", paths.seqdspn_checkpoint},
                                    {"plots_dir", paths.plots_dir}})
    check(!value.empty(), std::string("paths.") + name, "must not be empty");
  validate_dataset(train, "train");
  validate_dataset(test, "test");
  validate_section("grid", [&] { grid.validate(); });
  validate_hp(grid_train, "grid_train");
  check(seqdspn_arch.element_hidden >= 1, "seqdspn_arch.element_hidden", "must be at least 1");
  check(seqdspn_arch.embedding >= 1, "seqdspn_arch.embedding", "must be at least 1");
  check(seqdspn_arch.lstm_hidden >= 1, "seqdspn_arch.lstm_hidden", "must be at least 1");
  check(seqdspn_arch.lstm_layers >= 1, "seqdspn_arch.lstm_layers", "must be at least 1");
  check(seqdspn_arch.frame_count >= 1, "seqdspn_arch.frame_count", "must be at least 1");
  check(seqdspn_arch.rate_hz > 0.0, "seqdspn_arch.rate_hz", "must be positive");
  validate_section("seqdspn", [&] { seqdspn.validate(); });
  validate_hp(seqdspn_train, "seqdspn_train");
  check(feature_scale.x > 0.0, "feature_scale.x", "must be positive");
  check(feature_scale.y > 0.0, "feature_scale.y", "must be positive");
  check(feature_scale.v > 0.0, "feature_scale.v", "must be positive");
  check(cluster_k >= 1, "cluster_k", "must be at least 1");
  check(static_cast<std::size_t>(cluster_k) <= test.count, "cluster_k", "exceeds test.count");
  check(retrieve_k >= 1, "retrieve_k", "must be at least 1");
  check(plot_trajectories >= 0, "plot_trajectories", "must be non-negative");
}

std::string dump_config(const ExperimentConfig& cfg) { return to_json_doc(cfg).dump(2) + "\n"; }

ExperimentConfig parse_config(std::string_view json_text, const std::vector<std::string>& overrides) {
  json doc = to_json_doc(ExperimentConfig{});
  const bool blank = std::all_of(json_text.begin(), json_text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
  if (!blank) {
    json user;
    try {
      user = json::parse(json_text);
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("config is not valid JSON: ") + e.what());
    }
    overlay(doc, user, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig cfg;
  try {
    cfg = from_json_doc(doc);
  } catch (const json::exception& e) {
    throw ConfigError("", std::string("config conversion failed: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string config_hash(const ExperimentConfig& cfg) {
  json doc = to_json_doc(cfg);
  doc.erase("paths");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointFormat = "scenlat.checkpoint/1";

json checkpoint_header(std::string_view model, const TrainingLog& log, const std::string& hash) {
  return json{{"format", kCheckpointFormat}, {"model", std::string(model)}, {"config_hash", hash}, {"log", log}};
}

json open_checkpoint(const fs::path& path, std::string_view model) {
  json j = read_json(path);
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw StageError(path.string() + ": not a scenlat checkpoint");
  if (j.value("model", "") != model)
    throw StageError(path.string() + ": holds a " + j.value("model", "?") + " model, expected " + std::string(model));
  return j;
}
}  // namespace

void save_grid_checkpoint(const fs::path& path, const GridAutoencoder<float>& model, const TrainingLog& log,
                          const std::string& hash) {
  json j = checkpoint_header("grid", log, hash);
  j["grid"] = model.config();
  j["params"] = model.params();
  j["buffers"] = model.buffers();
  write_text(path, j.dump() + "\n");
}

GridCheckpoint load_grid_checkpoint(const fs::path& path) {
  const json j = open_checkpoint(path, "grid");
  try {
    GridAutoencoder<float> model(j.at("grid").get<GridConfig>(), 0);
    auto params = j.at("params").get<std::vector<float>>();
    auto buffers = j.at("buffers").get<std::vector<float>>();
    if (params.size() != model.params().size() || buffers.size() != model.buffers().size())
      throw StageError(path.string() + ": parameter count " + std::to_string(params.size()) +
                       " does not match the grid shape (expected " + std::to_string(model.params().size()) + ")");
    model.params() = std::move(params);
    model.buffers() = std::move(buffers);
    return {std::move(model), j.at("log").get<TrainingLog>(), j.at("config_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw StageError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
}

void save_seqdspn_checkpoint(const fs::path& path, const SeqDSPN& model, const TrainingLog& log,
                             const std::string& hash) {
  json j = checkpoint_header("seqdspn", log, hash);
  j["arch"] = model.arch();
  j["dspn"] = model.config();
  j["feature_scale"] = model.scale();
  j["params"] = model.params().flatten();
  write_text(path, j.dump() + "\n");
}

SeqDSPNCheckpoint load_seqdspn_checkpoint(const fs::path& path) {
  const json j = open_checkpoint(path, "seqdspn");
  try {
    SeqDSPN model(j.at("arch").get<SeqDSPNArch>(), j.at("dspn").get<DSPNConfig>(), 0,
                  j.at("feature_scale").get<FeatureScale>());
    const auto flat = j.at("params").get<std::vector<double>>();
    if (flat.size() != model.params().count())
      throw StageError(path.string() + ": parameter count " + std::to_string(flat.size()) +
                       " does not match the architecture (expected " + std::to_string(model.params().count()) + ")");
    model.params().unflatten(flat);
    return {std::move(model), j.at("log").get<TrainingLog>(), j.at("config_hash").get<std::string>()};
  } catch (const json::exception& e) {
    throw StageError(path.string() + ": malformed checkpoint (" + e.what() + ")");
  }
}

void split_train_val(const std::vector<Scenario>& data, double val_fraction, std::uint64_t seed,
                     std::vector<Scenario>& train, std::vector<Scenario>& val) {
  if (data.size() < 2) throw std::invalid_argument("split_train_val: need at least two scenarios");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0, 31));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(data.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, data.size() - 1);
  train.clear();
  val.clear();
  // keep the original order inside each part
  std::vector<char> is_val(data.size(), 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;
  for (std::size_t i = 0; i < data.size(); ++i) (is_val[i] ? val : train).push_back(data[i]);
}

std::optional<ClassLabel> neighbor_vote(const std::vector<Neighbor>& neighbors, const EmbeddingTable& t) {
  std::array<int, kNumClasses> votes{};
  bool any = false;
  for (const auto& n : neighbors) {
    const auto& label = t.records[t.index_of(n.scenario_id)].label;
    if (!label) continue;
    ++votes[static_cast<std::size_t>(*label)];
    any = true;
  }
  if (!any) return std::nullopt;
  const auto best = std::max_element(votes.begin(), votes.end());  // first maximum
  return static_cast<ClassLabel>(best - votes.begin());
}

std::string format_summary_table(const ExperimentSummary& s) {
  std::ostringstream o;
  const std::size_t runs = s.runs.size();
  o << "Model     V1-Measure (mean ± std over " << runs << (runs == 1 ? " run)" : " runs)") << "\n";
  for (const auto& [model, mean] : s.mean) {
    const std::string name = model == "grid" ? "Grid AE" : model == "seqdspn" ? "SeqDSPN" : model;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-9s %.3f ± %.3f\n", name.c_str(), mean, s.stddev.at(model));
    o << buf;
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Stages

Pipeline::Pipeline(ExperimentConfig cfg, std::ostream* log)
    : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), log_(log) {
  cfg_.validate();
}

fs::path Pipeline::out_dir() const { return cfg_.paths.out_dir; }
fs::path Pipeline::train_data_path() const { return out_dir() / cfg_.paths.train_data; }
fs::path Pipeline::test_data_path() const { return out_dir() / cfg_.paths.test_data; }
fs::path Pipeline::checkpoint_path(ModelKind m) const {
  return out_dir() / (m == ModelKind::Grid ? cfg_.paths.grid_checkpoint : cfg_.paths.seqdspn_checkpoint);
}
fs::path Pipeline::training_log_path(ModelKind m) const {
  return out_dir() / ("train_log_" + std::string(model_name(m)) + ".tsv");
}
fs::path Pipeline::embeddings_path(ModelKind m) const {
  return out_dir() / ("embeddings_" + std::string(model_name(m)) + ".tsv");
}
fs::path Pipeline::clusters_path(ModelKind m) const {
  return out_dir() / ("clusters_" + std::string(model_name(m)) + ".tsv");
}
fs::path Pipeline::report_path(ModelKind m) const {
  return out_dir() / ("report_" + std::string(model_name(m)) + ".json");
}
fs::path Pipeline::plots_dir() const { return out_dir() / cfg_.paths.plots_dir; }

void Pipeline::require(const fs::path& p, std::string_view what, std::string_view stage) const {
  if (!fs::exists(p))
    throw StageError("missing " + std::string(what) + " " + p.string() + "; run the `" + std::string(stage) +
                     "` stage first");
}

void Pipeline::note(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
}

void Pipeline::generate() {
  json summary{{"config_hash", hash_}};
  for (const auto* spec : {&cfg_.train, &cfg_.test}) {
    const bool is_train = spec == &cfg_.train;
    const fs::path path = is_train ? train_data_path() : test_data_path();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto s = generate_dataset(spec->generator, spec->count, path, spec->id_prefix);
    summary[is_train ? "train" : "test"] = json::parse(summary_json(s));
    note("generate: wrote " + std::to_string(s.total) + " scenarios to " + path.string());
  }
  write_text(out_dir() / "dataset_summary.json", summary.dump(2) + "\n");
}

TrainingLog Pipeline::train(ModelKind m) {
  require(train_data_path(), "training data", "generate");
  const auto data = read_scenarios(train_data_path());
  const auto& hp = m == ModelKind::Grid ? cfg_.grid_train : cfg_.seqdspn_train;
  std::vector<Scenario> tr, va;
  split_train_val(data, hp.val_fraction, hp.seed, tr, va);
  const std::string name(model_name(m));
  note("train-" + name + ": " + std::to_string(tr.size()) + " training / " + std::to_string(va.size()) +
       " validation scenarios, " + std::to_string(hp.epochs) + " epochs");
  auto on_epoch = [&](const TrainingLog::Epoch& e) {
    std::ostringstream o;
    o << "train-" << name << ": epoch " << e.epoch;
    for (const auto& [k, v] : e.metrics)
      if (k.rfind("val_", 0) == 0 || k == "train_loss") o << ' ' << k << '=' << v;
    note(o.str());
  };

  TrainingLog log;
  if (m == ModelKind::Grid) {
    auto r = train_grid_ae(tr, va, cfg_.grid, hp, on_epoch);
    save_grid_checkpoint(checkpoint_path(m), r.model, r.log, hash_);
    log = std::move(r.log);
  } else {
    auto r = train_seqdspn(tr, va, cfg_.seqdspn_arch, cfg_.seqdspn, hp, on_epoch, cfg_.feature_scale);
    save_seqdspn_checkpoint(checkpoint_path(m), r.model, r.log, hash_);
    log = std::move(r.log);
  }

  std::ostringstream tsv;
  tsv << "#config_hash=" << hash_ << "\n#best_epoch=" << log.best_epoch << "\nepoch";
  std::vector<std::string> keys;
  if (!log.epochs.empty())
    for (const auto& kv : log.epochs.back().metrics) keys.push_back(kv.first);
  for (const auto& k : keys) tsv << '\t' << k;
  tsv << '\n';
  for (const auto& e : log.epochs) {
    tsv << e.epoch;
    for (const auto& k : keys) {
      auto it = e.metrics.find(k);
      tsv << '\t';
      if (it == e.metrics.end()) {
        tsv << '-';
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", it->second);
        tsv << buf;
      }
    }
    tsv << '\n';
  }
  write_text(training_log_path(m), tsv.str());
  return log;
}

EmbeddingTable Pipeline::embed(ModelKind m) {
  const std::string name(model_name(m));
  require(test_data_path(), "test data", "generate");
  require(checkpoint_path(m), name + " checkpoint", "train-" + name);
  const auto data = read_scenarios(test_data_path());
  Matrix vectors;
  if (m == ModelKind::Grid) {
    auto ck = load_grid_checkpoint(checkpoint_path(m));
    vectors = embed_grid(ck.model, data);
  } else {
    auto ck = load_seqdspn_checkpoint(checkpoint_path(m));
    vectors = ck.model.embed(data);
  }
  auto table = make_embedding_table(data, vectors);
  table.model = name;
  table.checkpoint = checkpoint_path(m).filename().string();
  table.config_hash = hash_;
  write_embedding_table(embeddings_path(m), table);
  note("embed: wrote " + std::to_string(table.size()) + " " + name + " embeddings to " +
       embeddings_path(m).string());
  return table;
}

ClusterReport Pipeline::cluster(ModelKind m, std::optional<int> k_opt) {
  const int k = k_opt.value_or(cfg_.cluster_k);
  if (k < 1) throw ConfigError("cluster_k", "must be at least 1");
  require(embeddings_path(m), std::string(model_name(m)) + " embeddings", "embed");
  const auto table = read_embedding_table(embeddings_path(m));
  if (static_cast<std::size_t>(k) > table.size())
    throw ConfigError("cluster_k", std::to_string(k) + " exceeds the " + std::to_string(table.size()) +
                                       " embedded scenarios");

  ClusterReport r;
  r.model = m;
  r.k = k;
  r.config_hash = hash_;
  r.assignment = hierarchical_cluster(table.vectors(), k);
  std::vector<std::optional<ClassLabel>> labels;
  for (const auto& rec : table.records) labels.push_back(rec.label);
  const bool any_label = std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
  if (any_label) {
    r.majority = majority_vote_assign(r.assignment, labels);
    r.score = score_clustering(r.assignment, labels);
  }
  r.sizes.assign(static_cast<std::size_t>(k), 0);
  for (int c : r.assignment.cluster) ++r.sizes[static_cast<std::size_t>(c)];

  std::ostringstream tsv;
  tsv << "#model=" << model_name(m) << "\n#config_hash=" << hash_ << "\n#k=" << k
      << "\nscenario_id\tcluster\tlabel\tmajority\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    const int c = r.assignment.cluster[i];
    const auto& l = table.records[i].label;
    auto it = r.majority.find(c);
    tsv << table.records[i].scenario_id << '\t' << c << '\t' << (l ? class_name(*l) : "-") << '\t'
        << (it == r.majority.end() ? "-" : class_name(it->second)) << '\n';
  }
  write_text(clusters_path(m), tsv.str());

  json majority = json::object();
  for (const auto& [c, l] : r.majority) majority[std::to_string(c)] = std::string(class_name(l));
  json report{{"model", std::string(model_name(m))},
              {"config_hash", hash_},
              {"k", k},
              {"points", table.size()},
              {"scored", r.score.scored},
              {"cluster_sizes", r.sizes},
              {"majority_label", majority}};
  if (any_label) {
    report["v_measure"] = r.score.voted.v;
    report["homogeneity"] = r.score.voted.homogeneity;
    report["completeness"] = r.score.voted.completeness;
    report["cluster_v_measure"] = r.score.clusters.v;
    report["cluster_homogeneity"] = r.score.clusters.homogeneity;
    report["cluster_completeness"] = r.score.clusters.completeness;
  }
  write_text(report_path(m), report.dump(2) + "\n");

  std::ostringstream txt;
  txt << "model: " << model_name(m) << "\nconfig hash: " << hash_ << "\nclusters (k): " << k
      << "\npoints: " << table.size() << "\nlabeled points scored: " << r.score.scored << "\n";
  for (int c = 0; c < k; ++c) {
    auto it = r.majority.find(c);
    txt << "  cluster " << c << ": " << r.sizes[static_cast<std::size_t>(c)] << " points, majority "
        << (it == r.majority.end() ? "-" : class_name(it->second)) << "\n";
  }
  if (any_label) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "V-measure (majority vote): %.4f  (homogeneity %.4f, completeness %.4f)\n",
                  r.score.voted.v, r.score.voted.homogeneity, r.score.voted.completeness);
    txt << buf;
    std::snprintf(buf, sizeof buf, "V-measure (raw clusters):  %.4f  (homogeneity %.4f, completeness %.4f)\n",
                  r.score.clusters.v, r.score.clusters.homogeneity, r.score.clusters.completeness);
    txt << buf;
  } else {
    txt << "no labeled points; V-measure not computed\n";
  }
  fs::path txt_path = report_path(m);
  txt_path.replace_extension(".txt");
  write_text(txt_path, txt.str());
  note(txt.str());
  return r;
}

std::vector<Neighbor> Pipeline::retrieve(ModelKind m, const std::string& query_id, std::optional<int> k_opt) {
  const int k = k_opt.value_or(cfg_.retrieve_k);
  require(embeddings_path(m), std::string(model_name(m)) + " embeddings", "embed");
  const auto table = read_embedding_table(embeddings_path(m));
  return nearest_neighbors(query_id, table, k);
}

std::vector<fs::path> Pipeline::plot(ModelKind m, PlotColor color, const std::vector<std::string>& scenario_ids) {
  const std::string name(model_name(m));
  require(embeddings_path(m), name + " embeddings", "embed");
  const auto table = read_embedding_table(embeddings_path(m));
  if (table.width() < 2) throw StageError("plot: embeddings need at least two dimensions");
  const auto pca = pca_project(table.vectors(), 2);

  std::vector<int> groups(table.size(), 0);
  std::vector<std::string> group_names;
  if (color == PlotColor::Label) {
    for (int c = 0; c < kNumClasses; ++c) group_names.emplace_back(class_name(static_cast<ClassLabel>(c)));
    group_names.emplace_back("unlabeled");
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& l = table.records[i].label;
      groups[i] = l ? static_cast<int>(*l) : kNumClasses;
    }
  } else {
    require(clusters_path(m), name + " cluster assignments", "cluster");
    std::istringstream in(read_text(clusters_path(m)));
    std::map<std::string, int> cluster_of;
    int k = 0;
    for (std::string line; std::getline(in, line);) {
      if (line.empty() || line[0] == '#' || line.rfind("scenario_id\t", 0) == 0) continue;
      std::istringstream row(line);
      std::string id;
      int c = 0;
      if (!(row >> id >> c)) throw StageError(clusters_path(m).string() + ": malformed row \"" + line + "\"");
      cluster_of[id] = c;
      k = std::max(k, c + 1);
    }
    for (int c = 0; c < k; ++c) group_names.push_back("cluster " + std::to_string(c));
    for (std::size_t i = 0; i < table.size(); ++i) {
      auto it = cluster_of.find(table.records[i].scenario_id);
      if (it == cluster_of.end())
        throw StageError("cluster assignments do not cover " + table.records[i].scenario_id +
                         "; rerun the `cluster` stage");
      groups[i] = it->second;
    }
  }

  std::vector<fs::path> written;
  const std::string color_word = color == PlotColor::Label ? "label" : "cluster";
  const fs::path scatter = plots_dir() / ("pca_" + name + "_" + color_word + ".svg");
  char title[128];
  std::snprintf(title, sizeof title, "%s embeddings, PCA (%.0f%% + %.0f%% of variance)", name.c_str(),
                100.0 * pca.explained_ratio[0], 100.0 * pca.explained_ratio[1]);
  write_text(scatter, stamp_svg(pca_scatter_svg(pca.projected, groups, group_names, title), hash_));
  written.push_back(scatter);

  std::vector<std::string> ids = scenario_ids;
  std::vector<Scenario> selected;
  require(test_data_path(), "test data", "generate");
  const auto data = read_scenarios(test_data_path());
  if (ids.empty()) {
    for (int i = 0; i < cfg_.plot_trajectories && static_cast<std::size_t>(i) < data.size(); ++i)
      selected.push_back(data[static_cast<std::size_t>(i)]);
  } else {
    for (const auto& id : ids) {
      auto it = std::find_if(data.begin(), data.end(), [&](const Scenario& s) { return s.scenario_id == id; });
      if (it == data.end()) throw StageError("plot: unknown scenario id " + id);
      selected.push_back(*it);
    }
  }
  TrajectoryPlotOptions opt;
  opt.lateral_extent = cfg_.grid.lateral_extent;
  opt.longitudinal_extent = cfg_.grid.longitudinal_extent;
  for (const auto& s : selected) {
    const fs::path p = plots_dir() / ("scenario_" + s.scenario_id + ".svg");
    write_text(p, stamp_svg(trajectory_svg(s, opt), hash_));
    written.push_back(p);
  }
  for (const auto& p : written) note("plot: wrote " + p.string());
  return written;
}

void Pipeline::run_all(const std::vector<ModelKind>& models) {
  generate();
  for (ModelKind m : models) {
    train(m);
    embed(m);
    cluster(m);
  }
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, int runs, std::uint64_t seed_base,
                                 const std::vector<ModelKind>& models, std::ostream* log) {
  if (runs < 1) throw ConfigError("runs", "must be at least 1");
  if (models.empty()) throw ConfigError("model", "no model selected");
  const fs::path base = fs::absolute(cfg.paths.out_dir);
  Pipeline shared(cfg, log);
  shared.generate();

  ExperimentSummary summary;
  for (int r = 0; r < runs; ++r) {
    ExperimentConfig rc = cfg;
    const std::uint64_t seed = seed_base + static_cast<std::uint64_t>(r);
    rc.grid_train.seed = seed;
    rc.seqdspn_train.seed = seed;
    rc.paths.out_dir = (base / ("run_" + std::to_string(seed))).string();
    rc.paths.train_data = shared.train_data_path().string();
    rc.paths.test_data = shared.test_data_path().string();
    Pipeline p(rc, log);
    ExperimentRun run;
    run.seed = seed;
    for (ModelKind m : models) {
      p.train(m);
      p.embed(m);
      run.v_measure[std::string(model_name(m))] = p.cluster(m).score.voted.v;
    }
    summary.runs.push_back(run);
  }

  for (ModelKind m : models) {
    const std::string name(model_name(m));
    double sum = 0.0;
    for (const auto& r : summary.runs) sum += r.v_measure.at(name);
    const double mean = sum / static_cast<double>(runs);
    double ss = 0.0;
    for (const auto& r : summary.runs) ss += (r.v_measure.at(name) - mean) * (r.v_measure.at(name) - mean);
    summary.mean[name] = mean;
    summary.stddev[name] = runs > 1 ? std::sqrt(ss / static_cast<double>(runs - 1)) : 0.0;
  }

  json jr = json::array();
  for (const auto& r : summary.runs) jr.push_back({{"seed", r.seed}, {"v_measure", r.v_measure}});
  const json report{{"config_hash", config_hash(cfg)}, {"runs", jr}, {"mean", summary.mean},
                    {"stddev", summary.stddev}};
  write_text(base / "experiment.json", report.dump(2) + "\n");
  const std::string table = format_summary_table(summary);
  write_text(base / "experiment.txt", table);
  if (log) *log << table;
  return summary;
}

}  // namespace scenlat
