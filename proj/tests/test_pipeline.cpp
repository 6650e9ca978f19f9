#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scenlat/pipeline.hpp"
#include "scenlat/scenario_io.hpp"

using namespace scenlat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("scenlat_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough to run every stage in a few seconds.
ExperimentConfig tiny(const fs::path& out) {
  return parse_config("", {"paths.out_dir=\"" + out.string() + "\"", "train.count=40", "test.count=30",
                           "grid_train.epochs=1", "grid_train.batch_size=8", "seqdspn_train.epochs=1",
                           "seqdspn_train.batch_size=8", "seqdspn.inner_steps=5"});
}

std::string config_field_error(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SCENLAT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: defaults, round trip and hash") {
  const ExperimentConfig def;
  CHECK_NOTHROW(def.validate());
  const auto back = parse_config(dump_config(def));
  CHECK(dump_config(back) == dump_config(def));
  CHECK(config_hash(back) == config_hash(def));
  CHECK(config_hash(def).size() == 16u);

  // paths do not enter the hash, hyperparameters do
  CHECK(config_hash(parse_config("", {"paths.out_dir=elsewhere"})) == config_hash(def));
  CHECK(config_hash(parse_config("", {"grid_train.lr=0.0003"})) != config_hash(def));
  CHECK(config_hash(parse_config("", {"seqdspn.set_loss=hungarian"})) != config_hash(def));

  const auto o = parse_config(R"({"grid_train": {"epochs": 3}, "model": "grid"})",
                              {"seqdspn.lambda=2.5", "train.id_prefix=tr", "seqdspn.set_loss=hungarian"});
  CHECK(o.grid_train.epochs == 3);
  CHECK(o.grid_train.batch_size == def.grid_train.batch_size);
  CHECK(o.model == ModelKind::Grid);
  CHECK(o.seqdspn.lambda == 2.5);
  CHECK(o.train.id_prefix == "tr");
  CHECK(o.seqdspn.set_loss == SetLossKind::Hungarian);
  CHECK(parse_config("", {"test.generator.class_mix=[0.5,0.5,0,0]"}).test.generator.class_mix[1] == 0.5);
}

TEST_CASE("config: errors name the offending field") {
  CHECK(config_field_error(R"({"grid_train": {"lrr": 1}})") == "grid_train.lrr");
  CHECK(config_field_error(R"({"grid_train": {"lr": "fast"}})") == "grid_train.lr");
  CHECK(config_field_error(R"({"grid_train": {"epochs": 2.5}})") == "grid_train.epochs");
  CHECK(config_field_error(R"({"train": {"count": -3}})") == "train.count");
  CHECK(config_field_error(R"({"train": 5})") == "train");
  CHECK(config_field_error("", {"seqdspn.set_loss=l1"}) == "seqdspn.set_loss");
  CHECK(config_field_error("", {"model=cnn"}) == "model");
  CHECK(config_field_error("", {"grid_train.batch_size=0"}) == "grid_train.batch_size");
  CHECK(config_field_error("", {"seqdspn.inner_lr=0"}) == "seqdspn");
  CHECK(config_field_error("", {"train.generator.lane_width=-1"}) == "train.generator");
  CHECK(config_field_error("", {"train.generator.class_mix=[1,2]"}) == "train.generator.class_mix");
  CHECK(config_field_error("", {"no_equals_sign"}).empty());
  CHECK(config_field_error("{not json").empty());
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("stages refuse to run without their inputs") {
  const auto dir = fresh_dir("missing");
  Pipeline p(tiny(dir));
  try {
    p.train(ModelKind::Grid);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("generate") != std::string::npos);
  }
  CHECK_THROWS_AS(p.embed(ModelKind::SeqDSPN), StageError);
  CHECK_THROWS_AS(p.cluster(ModelKind::Grid), StageError);
  CHECK_THROWS_AS(p.retrieve(ModelKind::Grid, "test0"), StageError);
  CHECK_THROWS_AS(p.plot(ModelKind::Grid, PlotColor::Label, {}), StageError);
  fs::remove_all(dir);
}

TEST_CASE("tiny end-to-end run writes parseable, reproducible artifacts") {
  const auto a = fresh_dir("run_a");
  const auto b = fresh_dir("run_b");
  Pipeline pa(tiny(a));
  pa.run_all({ModelKind::Grid, ModelKind::SeqDSPN});

  for (ModelKind m : {ModelKind::Grid, ModelKind::SeqDSPN}) {
    const auto report = json::parse(slurp(pa.report_path(m)));
    CHECK(report.at("k") == 3);
    CHECK(report.at("config_hash") == pa.hash());
    const double v = report.at("v_measure").get<double>();
    CHECK((v >= 0.0 && v <= 1.0));
    CHECK(report.at("points") == 30);
    const auto table = read_embedding_table(pa.embeddings_path(m));
    CHECK(table.size() == 30u);
    CHECK(table.width() == 64);
    CHECK(table.config_hash == pa.hash());
    CHECK(fs::exists(pa.checkpoint_path(m)));
    CHECK(fs::exists(pa.training_log_path(m)));
  }
  CHECK(fs::exists(pa.out_dir() / "dataset_summary.json"));

  const auto neighbors = pa.retrieve(ModelKind::SeqDSPN, "test0", 4);
  CHECK(neighbors.size() == 4u);
  for (std::size_t i = 1; i < neighbors.size(); ++i) CHECK(neighbors[i - 1].distance <= neighbors[i].distance);
  CHECK_THROWS(pa.retrieve(ModelKind::SeqDSPN, "no-such-id"));

  const auto files = pa.plot(ModelKind::Grid, PlotColor::Label, {"test1"});
  REQUIRE(files.size() == 2u);
  for (const auto& f : files) {
    const auto svg = slurp(f);
    CHECK(svg.rfind("<svg", 0) != std::string::npos);
    CHECK(svg.find(pa.hash()) != std::string::npos);
  }
  CHECK_THROWS_AS(pa.plot(ModelKind::Grid, PlotColor::Cluster, {"nope"}), std::exception);

  const auto r5 = pa.cluster(ModelKind::Grid, 5);
  CHECK(r5.k == 5);
  CHECK_THROWS_AS(pa.cluster(ModelKind::Grid, 31), ConfigError);

  // the same experiment elsewhere produces the same bytes
  Pipeline pb(tiny(b));
  pb.run_all({ModelKind::Grid, ModelKind::SeqDSPN});
  CHECK(pb.hash() == pa.hash());
  pa.cluster(ModelKind::Grid);
  for (ModelKind m : {ModelKind::Grid, ModelKind::SeqDSPN}) {
    CHECK(slurp(pa.embeddings_path(m)) == slurp(pb.embeddings_path(m)));
    CHECK(slurp(pa.report_path(m)) == slurp(pb.report_path(m)));
    CHECK(slurp(pa.checkpoint_path(m)) == slurp(pb.checkpoint_path(m)));
  }
  CHECK(slurp(pa.test_data_path()) == slurp(pb.test_data_path()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("checkpoints round-trip and reject mismatches") {
  const auto dir = fresh_dir("ckpt");
  const ExperimentConfig cfg;
  GridAutoencoder<float> grid(cfg.grid, 5);
  TrainingLog log;
  log.epochs.push_back({0, {{"val_loss", 1.5}}});
  save_grid_checkpoint(dir / "g.json", grid, log, "abc");
  const auto g = load_grid_checkpoint(dir / "g.json");
  CHECK(g.model.params() == grid.params());
  CHECK(g.model.buffers() == grid.buffers());
  CHECK(g.config_hash == "abc");
  CHECK(g.log.metric(0, "val_loss") == 1.5);

  SeqDSPN dspn(cfg.seqdspn_arch, cfg.seqdspn, 9, cfg.feature_scale);
  save_seqdspn_checkpoint(dir / "s.json", dspn, log, "def");
  const auto s = load_seqdspn_checkpoint(dir / "s.json");
  CHECK(s.model.params().flatten() == dspn.params().flatten());
  CHECK(s.model.config().lambda == dspn.config().lambda);

  CHECK_THROWS_AS(load_grid_checkpoint(dir / "s.json"), StageError);
  CHECK_THROWS_AS(load_seqdspn_checkpoint(dir / "g.json"), StageError);

  // truncated parameter vector
  auto j = json::parse(slurp(dir / "g.json"));
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.value().is_array() && it.value().size() > 100) it.value().erase(it.value().begin());
  std::ofstream(dir / "bad.json") << j.dump();
  CHECK_THROWS_AS(load_grid_checkpoint(dir / "bad.json"), StageError);
  std::ofstream(dir / "junk.json") << "not json";
  CHECK_THROWS_AS(load_grid_checkpoint(dir / "junk.json"), StageError);
  fs::remove_all(dir);
}

TEST_CASE("train/validation split and neighbor vote") {
  GeneratorConfig g;
  const auto data = generate_scenarios(g, 50);
  std::vector<Scenario> tr, va, tr2, va2;
  split_train_val(data, 0.2, 3, tr, va);
  CHECK(tr.size() == 40u);
  CHECK(va.size() == 10u);
  split_train_val(data, 0.2, 3, tr2, va2);
  CHECK(tr == tr2);
  CHECK(va == va2);
  split_train_val(data, 0.2, 4, tr2, va2);
  CHECK_FALSE(va == va2);

  EmbeddingTable t;
  t.records = {{"a", {0.0}, ClassLabel::EgoOvertakes},
               {"b", {1.0}, ClassLabel::LeadingVehicleAhead},
               {"c", {2.0}, ClassLabel::LeadingVehicleAhead},
               {"d", {3.0}, std::nullopt},
               {"e", {4.0}, ClassLabel::EgoOvertakes}};
  CHECK(neighbor_vote({{"a", 0}, {"b", 1}, {"c", 2}}, t) == ClassLabel::LeadingVehicleAhead);
  // one each: the smaller class index wins
  CHECK(neighbor_vote({{"b", 0}, {"a", 1}}, t) == ClassLabel::EgoOvertakes);
  CHECK_FALSE(neighbor_vote({{"d", 0}}, t).has_value());
}

TEST_CASE("experiment runs every seed and reports mean and sample standard deviation") {
  ExperimentSummary s;
  s.mean["grid"] = 0.75;
  s.stddev["grid"] = 0.125;
  s.runs = {{0, {{"grid", 0.625}}}, {1, {{"grid", 0.875}}}};
  CHECK(format_summary_table(s).find("Grid AE   0.750 ± 0.125") != std::string::npos);

  const auto dir = fresh_dir("experiment");
  const auto cfg = tiny(dir);
  const auto sum = run_experiment(cfg, 2, 7, {ModelKind::Grid});
  REQUIRE(sum.runs.size() == 2u);
  CHECK(sum.runs[0].seed == 7u);
  CHECK(sum.runs[1].seed == 8u);
  const double a = sum.runs[0].v_measure.at("grid"), b = sum.runs[1].v_measure.at("grid");
  CHECK(sum.mean.at("grid") == doctest::Approx((a + b) / 2));
  CHECK(sum.stddev.at("grid") == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)));
  CHECK(fs::exists(dir / "run_7" / "grid.ckpt.json"));
  CHECK(fs::exists(dir / "run_8" / "report_grid.json"));
  const auto j = json::parse(slurp(dir / "experiment.json"));
  CHECK(j.is_object());
  CHECK(slurp(dir / "experiment.txt").find("Grid AE") != std::string::npos);
  CHECK_THROWS_AS(run_experiment(cfg, 0, 0, {ModelKind::Grid}), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("command-line exit codes") {
  const auto dir = fresh_dir("cli");
  const std::string out = "--set paths.out_dir=" + dir.string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("config " + out) == 0);
  CHECK(run_cli("config --set grid_train.lr=fast") == 1);
  CHECK(run_cli("config --set nope.field=1") == 1);
  CHECK(run_cli("embed " + out + " --model grid") == 2);
  CHECK(run_cli("retrieve " + out) == 1);  // --query-id is required
  CHECK(run_cli("generate " + out + " --set train.count=5 --set test.count=5") == 0);
  CHECK(fs::exists(dir / "train.jsonl"));
  CHECK(read_scenarios(dir / "test.jsonl").size() == 5u);
  fs::remove_all(dir);
}
