// Command-line front end for the experiment pipeline.
//
//   scenlat generate       --config exp.json
//   scenlat train-grid     --config exp.json --set grid_train.epochs=5
//   scenlat embed          --config exp.json --model grid
//   scenlat cluster        --config exp.json --model grid --k 3
//   scenlat retrieve       --config exp.json --model grid --query-id test-00017 --k 5
//   scenlat plot           --config exp.json --model grid --color-by label
//   scenlat experiment     --config exp.json --runs 6 --seed-base 0
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "scenlat/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string model;
};

void add_common(CLI::App* cmd, Common& c, bool with_model) {
  cmd->add_option("-c,--config", c.config_path, "experiment config (JSON); defaults apply when omitted");
  cmd->add_option("--set", c.overrides, "override a config field, e.g. --set grid_train.lr=3e-4")
      ->type_name("KEY=VALUE")
      ->take_all();
  if (with_model)
    cmd->add_option("-m,--model", c.model, "grid, seqdspn, or both (default: the config's model)");
}

scenlat::ExperimentConfig load(const Common& c) {
  if (c.config_path.empty()) return scenlat::parse_config("", c.overrides);
  return scenlat::load_config(c.config_path, c.overrides);
}

std::vector<scenlat::ModelKind> models_of(const Common& c, const scenlat::ExperimentConfig& cfg) {
  if (c.model.empty()) return {cfg.model};
  if (c.model == "both") return {scenlat::ModelKind::Grid, scenlat::ModelKind::SeqDSPN};
  return {scenlat::parse_model(c.model)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Traffic scenario representation learning: data generation, training, embedding, clustering"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("generate", "write the synthetic training and test data sets");
  add_common(gen, common, false);
  auto* train_grid = app.add_subcommand("train-grid", "train the convolutional grid autoencoder");
  add_common(train_grid, common, false);
  auto* train_dspn = app.add_subcommand("train-seqdspn", "train the sequential set-prediction autoencoder");
  add_common(train_dspn, common, false);
  auto* embed = app.add_subcommand("embed", "embed the test set with a trained model");
  add_common(embed, common, true);

  std::optional<int> k;
  auto* cluster = app.add_subcommand("cluster", "hierarchical clustering and V-measure report");
  add_common(cluster, common, true);
  cluster->add_option("-k,--k", k, "number of clusters (default: cluster_k)");

  std::string query_id;
  auto* retrieve = app.add_subcommand("retrieve", "nearest scenarios in the latent space");
  add_common(retrieve, common, true);
  retrieve->add_option("-q,--query-id", query_id, "scenario id of the query")->required();
  retrieve->add_option("-k,--k", k, "number of neighbors (default: retrieve_k)");

  std::string color_by = "cluster";
  std::vector<std::string> plot_ids;
  auto* plot = app.add_subcommand("plot", "PCA scatter of the embeddings and bird's-eye trajectory plots");
  add_common(plot, common, true);
  plot->add_option("--color-by", color_by, "cluster or label")->check(CLI::IsMember({"cluster", "label"}));
  plot->add_option("--scenario-id", plot_ids, "scenarios to draw (default: the first plot_trajectories)");

  auto* all = app.add_subcommand("run-all", "generate, then train, embed and cluster each model");
  add_common(all, common, true);

  int runs = 6;
  std::uint64_t seed_base = 0;
  auto* experiment = app.add_subcommand("experiment", "repeat training over several seeds, report mean ± std");
  add_common(experiment, common, true);
  experiment->add_option("--runs", runs, "number of training runs")->check(CLI::PositiveNumber);
  experiment->add_option("--seed-base", seed_base, "seed of the first run; later runs count up");

  auto* show = app.add_subcommand("config", "print the effective configuration and its hash");
  add_common(show, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto cfg = load(common);
    if (*show) {
      std::cout << scenlat::dump_config(cfg) << "config_hash " << scenlat::config_hash(cfg) << "\n";
      return 0;
    }
    scenlat::Pipeline p(cfg, &std::clog);
    if (*gen) {
      p.generate();
    } else if (*train_grid) {
      p.train(scenlat::ModelKind::Grid);
    } else if (*train_dspn) {
      p.train(scenlat::ModelKind::SeqDSPN);
    } else if (*embed) {
      for (auto m : models_of(common, cfg)) p.embed(m);
    } else if (*cluster) {
      for (auto m : models_of(common, cfg)) p.cluster(m, k);
    } else if (*retrieve) {
      const auto models = models_of(common, cfg);
      if (models.size() != 1) throw scenlat::ConfigError("model", "retrieve needs a single model");
      const auto neighbors = p.retrieve(models.front(), query_id, k);
      std::cout << "rank\tscenario_id\tdistance\n";
      for (std::size_t i = 0; i < neighbors.size(); ++i) {
        char dist[32];
        std::snprintf(dist, sizeof dist, "%.6g", neighbors[i].distance);
        std::cout << i + 1 << '\t' << neighbors[i].scenario_id << '\t' << dist << '\n';
      }
    } else if (*plot) {
      const auto color = color_by == "label" ? scenlat::PlotColor::Label : scenlat::PlotColor::Cluster;
      for (auto m : models_of(common, cfg)) p.plot(m, color, plot_ids);
    } else if (*all) {
      p.run_all(models_of(common, cfg));
    } else if (*experiment) {
      const auto summary = scenlat::run_experiment(cfg, runs, seed_base, models_of(common, cfg), &std::clog);
      std::cout << scenlat::format_summary_table(summary);
    }
  } catch (const scenlat::ConfigError& e) {
    std::cerr << "scenlat: config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "scenlat: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
