#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mixl/experiment.hpp"

using namespace mixl;
namespace fs = std::filesystem;

TEST_CASE("method parsing") {
  CHECK(parse_method("MCMC") == Method::mcmc);
  CHECK(parse_method("msle") == Method::msle);
  CHECK(parse_method("VB-NCVMP-DELTA") == Method::vb_ncvmp_delta);
  CHECK_THROWS_WITH_AS(parse_method("VB-NCVMP-QMC"), doctest::Contains("numerically unstable"),
                       std::invalid_argument);
  CHECK_THROWS_AS(parse_method("bogus"), std::invalid_argument);
  CHECK(all_methods().size() == 7);
}

TEST_CASE("config validation and defaults") {
  ExperimentConfig cfg = default_experiment_config(true);
  CHECK(cfg.methods.size() == 7);  // full method set by default
  cfg.validate();

  ExperimentConfig bad = cfg;
  bad.replications = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("replications"), std::invalid_argument);

  bad = cfg;
  bad.scenarios = {9};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad = cfg;
  bad.grid.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  const ExperimentConfig paper = default_experiment_config(false);
  CHECK(paper.mcmc.iterations == 100000);
  CHECK(paper.msle_draws == 1000);
  CHECK(paper.replications == 20);
}

TEST_CASE("config file round trip and error reporting") {
  const fs::path tmp = fs::temp_directory_path() / "mixl_cfg_test.json";
  ExperimentConfig cfg = default_experiment_config(true);
  cfg.scenarios = {1, 3};
  cfg.replications = 4;
  cfg.methods = {Method::mcmc, Method::vb_ncvmp_delta};
  cfg.base_seed = 777;
  save_experiment_config(cfg, tmp.string());
  const ExperimentConfig back = load_experiment_config(tmp.string());
  CHECK(back.scenarios == cfg.scenarios);
  CHECK(back.replications == 4);
  CHECK(back.methods == cfg.methods);
  CHECK(back.base_seed == 777);

  {
    std::ofstream f(tmp);
    f << "{\"replications\": 0}\n";
  }
  CHECK_THROWS_WITH_AS(load_experiment_config(tmp.string()), doctest::Contains("replications"),
                       std::invalid_argument);
  {
    std::ofstream f(tmp);
    f << "{\"methods\": [\"VB-NCVMP-QMC\"]}\n";
  }
  CHECK_THROWS_WITH_AS(load_experiment_config(tmp.string()),
                       doctest::Contains("numerically unstable"), std::invalid_argument);
  {
    std::ofstream f(tmp);
    f << "{not json}\n";
  }
  CHECK_THROWS_WITH_AS(load_experiment_config(tmp.string()), doctest::Contains("parse error"),
                       std::invalid_argument);
  fs::remove(tmp);
}

TEST_CASE("cell seeds are distinct across the grid") {
  ExperimentConfig cfg = default_experiment_config(true);
  cfg.scenarios = {1, 2, 3, 4};
  cfg.grid = {{500, 5}, {500, 10}, {2000, 5}, {2000, 10}};
  cfg.replications = 20;
  std::set<std::uint64_t> seeds;
  for (int s : cfg.scenarios)
    for (const auto& [n, t] : cfg.grid)
      for (int r = 1; r <= cfg.replications; ++r)
        seeds.insert(cell_seed(cfg, CellKey{s, n, t, r}));
  CHECK(seeds.size() == 4u * 4u * 20u);
}

TEST_CASE("smoke experiment with resume") {
  const fs::path out = fs::temp_directory_path() / "mixl_exp_smoke";
  fs::remove_all(out);
  ExperimentConfig cfg = default_experiment_config(true);
  cfg.scenarios = {1};
  cfg.grid = {{60, 4}};  // large enough that the heterogeneity is identified
  cfg.replications = 2;
  cfg.methods = {Method::vb_ncvmp_delta};
  cfg.output_dir = out.string();
  cfg.mcmc.iterations = 200;
  cfg.mcmc.burn_in = 100;
  cfg.eval.true_draws = 20000;
  cfg.eval.inner = 200;
  cfg.eval.outer_vb = 50;
  cfg.base_seed = 99;

  const ExperimentOutcome first = run_experiment(cfg);
  CHECK(first.cells_run == 2);
  CHECK(first.cells_failed == 0);
  const fs::path table = out / "tables" / "metrics_s1_n60_t4.csv";
  REQUIRE(fs::exists(table));
  std::ifstream tf(table);
  std::string header, row;
  std::getline(tf, header);
  std::getline(tf, row);
  CHECK(row.rfind("VB-NCVMP-DELTA,2,", 0) == 0);

  // Resume: everything is already on disk, and tables are reproduced
  // byte-identically from the stored cells.
  std::string before;
  {
    std::ifstream f(table);
    before.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  const ExperimentOutcome second = run_experiment(cfg);
  CHECK(second.cells_run == 0);
  CHECK(second.cells_skipped == 2);
  std::string after;
  {
    std::ifstream f(table);
    after.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  CHECK(before == after);
  fs::remove_all(out);
}

TEST_CASE("grid dataset generation") {
  const fs::path out = fs::temp_directory_path() / "mixl_gen_smoke";
  fs::remove_all(out);
  ExperimentConfig cfg = default_experiment_config(true);
  cfg.scenarios = {1};
  cfg.grid = {{8, 2}};
  cfg.replications = 1;
  cfg.output_dir = out.string();
  generate_grid_datasets(cfg);
  CHECK(fs::exists(out / "datasets" / "s1_n8_t2_r001_train.csv"));
  CHECK(fs::exists(out / "datasets" / "s1_n8_t2_r001_validation.csv"));
  const LoadedDataset train = load_dataset((out / "datasets" / "s1_n8_t2_r001_train.csv").string());
  CHECK(train.dataset.num_individuals == 8);
  REQUIRE(train.truth.has_value());
  const LoadedDataset val =
      load_dataset((out / "datasets" / "s1_n8_t2_r001_validation.csv").string());
  CHECK(val.dataset.num_individuals == 25);
  CHECK(val.dataset.occasions_per_individual.front() == 1);
  fs::remove_all(out);
}
