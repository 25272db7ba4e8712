// Copyright 2026 The CDAS Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// cdas_cli: dataset generation, training, evaluation and timing runs.
//
//   cdas_cli gen-data --config c.json --out work
//   cdas_cli train    --config c.json --out work
//   cdas_cli run      --config c.json --out work --trials 20 --set run.algos='["eig","das"]'
//   cdas_cli bench    --config c.json --out work --trials 3
//   cdas_cli compare  work/a/metrics.csv work/b/metrics.csv --out work/joined
//   cdas_cli stats    --out work

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cdas/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  int trials = 10;
  int workers = 1;
  std::string out = ".";
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_trials) {
  cmd->add_option("--config", c.config, "JSON config; omitted keys take defaults");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override, e.g. --set env.k=4")->allow_extra_args(false);
  if (with_trials) cmd->add_option("--trials", c.trials, "trials per algo")->check(CLI::PositiveNumber);
}

nlohmann::json resolved_config(const Common& c) {
  auto cfg = c.config.empty() ? cdas::default_experiment_config() : cdas::load_config(c.config);
  for (const auto& s : c.sets) cdas::apply_override(cfg, s);
  return cfg;
}

nlohmann::json manifest(const std::string& command, const Common& c, const nlohmann::json& cfg) {
  return {{"command", command}, {"seed", c.seed}, {"trials", c.trials}, {"config", cfg}};
}

std::shared_ptr<const cdas::DiffusionModels> maybe_models(const cdas::ExperimentSettings& s,
                                                          const fs::path& out) {
  for (const auto& a : s.algos)
    if (cdas::needs_models(a))
      return std::make_shared<const cdas::DiffusionModels>(
          cdas::load_models(cdas::resolve_path(out, s.models_dir)));
  return nullptr;
}

int gen_data(const Common& c) {
  const auto cfg = resolved_config(c);
  auto s = cdas::settings_from_json(cfg);
  s.data.rng_seed = c.seed;
  const auto path = cdas::resolve_path(c.out, s.dataset_file);
  const auto ds = cdas::generate_dataset(s.data, c.workers);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cdas::write_dataset(path, ds);
  std::cout << "wrote " << ds.episodes.size() << " episodes to " << path.string() << "\n";
  return 0;
}

int train(const Common& c) {
  const auto cfg = resolved_config(c);
  const auto s = cdas::settings_from_json(cfg);
  const fs::path out(c.out);
  const auto ds = cdas::read_dataset(cdas::resolve_path(out, s.dataset_file));
  cdas::Rng rng(cdas::derive_seed(c.seed, 0x7a11));
  const auto bundle = cdas::train_bundle(ds, s, rng);
  const auto dir = cdas::resolve_path(out, s.models_dir);
  fs::create_directories(dir);
  cdas::save_models(dir, bundle.models);
  std::ostringstream curves;
  cdas::write_training_curves(curves, bundle);
  cdas::write_file_atomic(out / "training_curves.csv", curves.str());
  cdas::write_file_atomic(out / "training_curves.json", manifest("train", c, cfg).dump(2) + "\n");
  std::cout << "final loss rho " << bundle.rho_loss.back() << " nu " << bundle.nu_loss.back()
            << " dist " << bundle.dist_loss.back() << "\nmodels in " << dir.string() << "\n";
  return 0;
}

int run(const Common& c, bool bench) {
  auto cfg = resolved_config(c);
  if (bench) cfg["run"]["record_wallclock"] = true;
  const auto s = cdas::settings_from_json(cfg);
  const fs::path out(c.out);
  const auto results = cdas::run_trials(s, c.seed, c.trials, c.workers, maybe_models(s, out));
  const auto rows = cdas::metrics_rows(results, s.record_wallclock);
  auto meta = manifest(bench ? "bench" : "run", c, cfg);
  meta["schema"] = "cdas-metrics";
  meta["schema_version"] = cdas::kMetricsSchemaVersion;
  meta["columns"] = cdas::metrics_columns();
  std::ostringstream csv;
  cdas::write_metrics_csv(csv, rows);
  if (!bench) {
    cdas::write_file_atomic(out / "metrics.csv", csv.str());
    cdas::write_file_atomic(out / "metrics.json", meta.dump(2) + "\n");
    std::cout << "wrote " << rows.size() << " rows to " << (out / "metrics.csv").string() << "\n";
    return 0;
  }
  std::ostringstream table;
  table << "algo,decisions,mean_decision_wallclock_s\n";
  std::cout << std::left << std::setw(8) << "algo" << std::setw(12) << "decisions"
            << "mean decision s\n";
  for (const auto& b : cdas::bench_summary(rows)) {
    table << b.algo << ',' << b.decisions << ',' << b.mean_decision_s << '\n';
    std::cout << std::setw(8) << b.algo << std::setw(12) << b.decisions << b.mean_decision_s
              << "\n";
  }
  cdas::write_file_atomic(out / "bench_metrics.csv", csv.str());
  cdas::write_file_atomic(out / "bench.csv", table.str());
  cdas::write_file_atomic(out / "bench.json", meta.dump(2) + "\n");
  return 0;
}

int compare(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<cdas::MetricsRow> all;
  for (const auto& in : inputs) {
    std::ifstream is(in);
    if (!is) throw std::runtime_error("cannot open " + in);
    auto rows = cdas::read_metrics_csv(is);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  std::ostringstream csv;
  cdas::write_metrics_csv(csv, all);
  cdas::write_file_atomic(fs::path(out) / "compare.csv", csv.str());
  std::cout << "joined " << all.size() << " rows from " << inputs.size() << " files\n";
  return 0;
}

void print_histogram(const char* title, const cdas::Histogram& h) {
  std::cout << title << " [" << h.lo << ", " << h.hi << "]\n";
  const double w = (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    std::cout << "  " << std::setw(10) << h.lo + w * static_cast<double>(i) << " "
              << h.counts[i] << "\n";
}

int stats(const Common& c, const std::string& dataset, int bins) {
  const auto s = cdas::settings_from_json(resolved_config(c));
  const auto path = dataset.empty() ? cdas::resolve_path(c.out, s.dataset_file) : fs::path(dataset);
  const auto st = cdas::dataset_stats(cdas::read_dataset(path), bins);
  std::cout << "episodes " << st.episodes << " chunks " << st.chunks << "\n";
  print_histogram("one-step reward", st.rewards);
  print_histogram("discounted return", st.returns);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based active search experiments"};
  app.require_subcommand(1);
  Common gen_c, train_c, run_c, bench_c, stats_c;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate an offline dataset");
  add_common(gen_cmd, gen_c, false);
  auto* train_cmd = app.add_subcommand("train", "train the three networks");
  add_common(train_cmd, train_c, false);
  auto* run_cmd = app.add_subcommand("run", "evaluate planners and write metrics.csv");
  add_common(run_cmd, run_c, true);
  auto* bench_cmd = app.add_subcommand("bench", "mean decision wall-clock per algo");
  add_common(bench_cmd, bench_c, true);
  auto* cmp_cmd = app.add_subcommand("compare", "join metrics CSVs");
  std::vector<std::string> cmp_inputs;
  std::string cmp_out = ".";
  cmp_cmd->add_option("inputs", cmp_inputs, "metrics CSV files")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--out", cmp_out, "output directory");
  auto* stats_cmd = app.add_subcommand("stats", "label histograms of a dataset");
  add_common(stats_cmd, stats_c, false);
  std::string stats_path;
  int bins = 10;
  stats_cmd->add_option("--dataset", stats_path, "dataset file (default from config)");
  stats_cmd->add_option("--bins", bins, "histogram bins")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen_cmd) return gen_data(gen_c);
    if (*train_cmd) return train(train_c);
    if (*run_cmd) return run(run_c, false);
    if (*bench_cmd) return run(bench_c, true);
    if (*cmp_cmd) return compare(cmp_inputs, cmp_out);
    if (*stats_cmd) return stats(stats_c, stats_path, bins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
