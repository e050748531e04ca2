#pragma once

// Command-line front end: train, eval, project, export-embeddings, report.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spherehead/data.hpp"
#include "spherehead/errors.hpp"
#include "spherehead/experiment.hpp"
#include "spherehead/heads.hpp"
#include "spherehead/report.hpp"
#include "spherehead/stereo.hpp"
#include "spherehead/train.hpp"

namespace spherehead::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Bad flag values or combinations; reported like parse errors.
struct UsageError : Error {
  using Error::Error;
};

inline std::filesystem::path default_results_dir() {
  const char* env = std::getenv("SPHEREHEAD_RESULTS");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("results");
}

namespace detail {

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  try {
    for (std::size_t v : experiment::detail::parse_list(text)) seeds.push_back(v);
  } catch (const ConfigError&) {
    throw UsageError("--seeds expects comma-separated non-negative integers, got '" + text + "'");
  }
  if (seeds.empty()) throw UsageError("--seeds needs at least one seed");
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw UsageError("--seeds has duplicates");
  return seeds;
}

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * fraction);
  return buf;
}

/// A run directory, or a single record file inside one.
inline std::vector<std::filesystem::path> run_records(const std::filesystem::path& run,
                                                      std::optional<std::uint64_t> seed) {
  std::filesystem::path dir = run;
  if (!std::filesystem::exists(dir) && !run.has_parent_path()) dir = default_results_dir() / run;
  if (std::filesystem::is_regular_file(dir)) {
    if (seed) throw UsageError("--seed cannot be combined with a record file");
    return {dir};
  }
  if (!std::filesystem::is_directory(dir)) throw IoError("run not found: " + run.string());
  if (seed) {
    const auto file = dir / (std::to_string(*seed) + ".txt");
    if (!std::filesystem::is_regular_file(file)) throw IoError("run " + dir.string() + " has no seed " + std::to_string(*seed));
    return {file};
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  if (files.empty()) throw IoError("run " + dir.string() + " holds no records");
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    return std::stoull(a.stem().string()) < std::stoull(b.stem().string());
  });
  return files;
}

struct Retrained {
  train::Model model;
  data::Dataset train_ds;
  data::Dataset test_ds;
};

/// Runs carry no weights; the model is rebuilt by training from the record's
/// config and seed.
inline Retrained retrain(const experiment::RunRecord& rec) {
  if (!rec.ok) throw StateError("run seed " + std::to_string(rec.seed) + " failed and has no model: " + rec.error);
  auto [train_ds, test_ds] = experiment::load_split(rec.config.data);
  train::Model model = train::build_model(rec.config.model, 1, 1, 0);
  const auto again = experiment::run_single(rec.config, rec.seed, train_ds, test_ds, &model);
  if (!again.ok) throw TrainingError("re-training seed " + std::to_string(rec.seed) + " failed: " + again.error);
  return {std::move(model), std::move(train_ds), std::move(test_ds)};
}

}  // namespace detail

struct TrainFlags {
  std::string dataset = "spirals";
  std::string loss;
  std::string project = "on";
  std::optional<double> m, s, lr;
  std::optional<std::size_t> queue;
  double momentum = 0.92;
  std::size_t epochs = 300;
  std::size_t batch = 128;
  std::string seeds = "1,2,3,4,5";
  std::optional<std::string> out;
  std::string name;
  std::size_t jobs = 1;
  std::string hidden = "512,256";
  std::size_t feature_dim = 16;
  std::string psi = "monotone";
  std::size_t plateau_window = 10;
  double plateau_tolerance = 1e-4;
  std::size_t n_per_class = 500;
  double noise = 0.1;
  std::size_t classes = 4;
  std::uint64_t data_seed = 0;
  double train_fraction = 0.7;
  std::optional<std::size_t> subset_per_class, downsample;
  char delimiter = ',';
  bool header = false;
  std::size_t label_column = 0;
};

/// Turns flags into a validated experiment config. Invalid values raise
/// UsageError.
inline experiment::ExperimentConfig make_config(const TrainFlags& f) {
  experiment::ExperimentConfig cfg;
  try {
    cfg.data = experiment::DataConfig::from_spec(f.dataset);
    const auto family = heads::parse_family(f.loss);
    cfg.model.margin = heads::MarginConfig::defaults(family);
    if (f.m) {
      if (family == heads::Family::cce) throw UsageError("--m does not apply to cce");
      cfg.model.margin.m = *f.m;
    }
    if (f.s) {
      if (family == heads::Family::cce || family == heads::Family::sphereface) {
        throw UsageError("--s does not apply to " + f.loss + " (its logit scale is fixed)");
      }
      cfg.model.margin.s = *f.s;
    }
    if (f.queue) {
      if (family != heads::Family::broadface) throw UsageError("--queue applies only to broadface");
      cfg.model.margin.queue_capacity = *f.queue;
    }
    cfg.model.margin.use_monotone_psi = f.psi == "monotone";
    cfg.model.projection = f.project == "on";
    cfg.model.hidden = experiment::detail::parse_list(f.hidden);
    cfg.model.feature_dim = f.feature_dim;
    cfg.model.validate();

    cfg.optim.learning_rate = f.lr.value_or(train::default_learning_rate(family));
    cfg.optim.momentum = f.momentum;
    cfg.optim.epochs = f.epochs;
    cfg.optim.batch_size = f.batch;
    cfg.optim.plateau_window = f.plateau_window;
    cfg.optim.plateau_tolerance = f.plateau_tolerance;
    cfg.optim.validate();

    auto& d = cfg.data;
    d.n_per_class = f.n_per_class;
    d.noise = f.noise;
    d.classes = f.classes;
    d.seed = f.data_seed;
    d.train_fraction = f.train_fraction;
    d.subset_per_class = f.subset_per_class;
    d.downsample_to = f.downsample;
    d.delimiter = f.delimiter;
    d.header = f.header;
    d.label_column = f.label_column;
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) throw UsageError("--train-fraction must lie in (0, 1)");
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  cfg.name = f.name.empty() ? cfg.default_name() : f.name;
  return cfg;
}

inline void print_summary(std::ostream& out, const experiment::ExperimentResult& res,
                          const std::optional<std::filesystem::path>& dir) {
  const auto& rep = res.report;
  out << "experiment " << rep.experiment;
  if (dir) out << " -> " << (*dir / rep.experiment).string();
  out << '\n';
  for (const auto& r : res.runs) {
    char line[160];
    if (r.ok) {
      std::snprintf(line, sizeof line, "  seed %llu: test %.2f%%  train %.2f%%  epochs %zu%s  %.2f s\n",
                    static_cast<unsigned long long>(r.seed), 100.0 * r.test_accuracy, 100.0 * r.train_accuracy,
                    r.history.epochs.empty() ? std::size_t{0} : r.history.epochs.back().epoch,
                    r.history.early_stopped ? " (plateau)" : "", r.wall_time_s);
      out << line;
    } else {
      out << "  seed " << r.seed << ": FAILED " << r.error << '\n';
    }
  }
  out << "test accuracy " << report::format_cell(rep.mean, rep.std) << " (population std over "
      << rep.per_seed_accuracy.size() << " seeds)\n";
}

inline int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
  const auto cfg = make_config(flags);
  const auto seeds = detail::parse_seeds(flags.seeds);
  const auto dir = flags.out ? std::filesystem::path(*flags.out) : default_results_dir();
  for (auto seed : seeds) {
    const auto file = dir / cfg.name / (std::to_string(seed) + ".txt");
    if (std::filesystem::exists(file)) throw IoError("refusing to overwrite existing run record " + file.string());
  }
  const auto res = experiment::run_experiment(cfg, seeds, {flags.jobs, dir});
  print_summary(out, res, dir);
  if (!res.report.complete()) {
    err << "error: " << res.report.failed_seeds.size() << " seed(s) failed\n";
    return kExitError;
  }
  return kExitOk;
}

inline int cmd_eval(const std::string& run, std::optional<std::uint64_t> seed, const std::string& split,
                    std::ostream& out, std::ostream& err) {
  bool all_match = true;
  for (const auto& file : detail::run_records(run, seed)) {
    const auto rec = experiment::read_record(file);
    const auto rt = detail::retrain(rec);
    const auto& ds = split == "train" ? rt.train_ds : rt.test_ds;
    const double acc = train::evaluate(rt.model, ds);
    const double stored = split == "train" ? rec.train_accuracy : rec.test_accuracy;
    const bool match = acc == stored;
    all_match = all_match && match;
    out << rec.config.name << " seed " << rec.seed << ": " << split << " accuracy " << detail::percent(acc)
        << " (recorded " << detail::percent(stored) << (match ? ", reproduced" : ", MISMATCH") << ")\n";
  }
  if (!all_match) {
    err << "error: re-evaluation does not reproduce the recorded accuracy\n";
    return kExitError;
  }
  return kExitOk;
}

inline int cmd_project(const std::string& in_path, const std::string& out_path, char delimiter, std::ostream& out) {
  nd::Tensor x;
  if (in_path == "-") {
    x = data::parse_matrix(std::cin, delimiter);
  } else {
    std::ifstream in(in_path);
    if (!in) throw IoError("cannot open " + in_path);
    try {
      x = data::parse_matrix(in, delimiter);
    } catch (const ParseError& e) {
      throw ParseError(in_path + ": " + e.what());
    }
  }
  const nd::Tensor p = stereo::project_batch(x);
  std::ostringstream text;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto row = p.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) text << (c ? std::string(1, delimiter) : "") << data::format_exact(row[c]);
    text << '\n';
  }
  if (out_path == "-") {
    out << text.str();
  } else {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << text.str();
    if (!f) throw IoError("write failed for " + out_path);
  }
  return kExitOk;
}

inline int cmd_export(const std::string& run, std::optional<std::uint64_t> seed, const std::string& split,
                      const std::string& out_path, std::ostream& out) {
  const auto files = detail::run_records(run, seed);
  const auto rec = experiment::read_record(files.front());
  const auto rt = detail::retrain(rec);
  const auto& ds = split == "train" ? rt.train_ds : rt.test_ds;
  const nd::Tensor emb = rt.model.embed(ds.features);
  data::Dataset exported{ds.name, emb, ds.labels, ds.class_count};
  if (out_path == "-") {
    data::write_delimited(out, exported);
  } else {
    data::save_delimited(out_path, exported);
  }
  return kExitOk;
}

inline int cmd_report(const std::string& results, const std::string& out_path, std::ostream& out) {
  const auto reports = experiment::load_reports(results);
  const std::string table = report::emit_table(reports);
  out << table;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << table;
  }
  return kExitOk;
}

/// Parses `args` (without the program name) and runs the chosen command.
/// Returns the process exit status.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stereographic projection and angular-margin heads", "spherehead"};
  app.require_subcommand(1);
  app.fallthrough(false);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one configuration over several seeds");
  train_cmd->add_option("--dataset", tf.dataset, "spirals | blobs | csv:<path> | cifar10:<dir> | cifar100:<dir>")
      ->capture_default_str();
  train_cmd->add_option("--loss", tf.loss, "Loss family")
      ->required()
      ->check(CLI::IsMember({"cce", "sphereface", "cosface", "arcface", "broadface"}));
  train_cmd->add_option("--project", tf.project, "Stereographic projection before the head")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  train_cmd->add_option("--m", tf.m, "Margin (integer 1-4 for sphereface)");
  train_cmd->add_option("--s", tf.s, "Logit scale for cosface/arcface/broadface");
  train_cmd->add_option("--queue", tf.queue, "BroadFace queue capacity");
  train_cmd->add_option("--psi", tf.psi, "Target logit past theta = pi")
      ->check(CLI::IsMember({"monotone", "literal"}))
      ->capture_default_str();
  train_cmd->add_option("--lr", tf.lr, "Learning rate (default 1e-3 for cce, 1e-4 otherwise)");
  train_cmd->add_option("--momentum", tf.momentum)->capture_default_str();
  train_cmd->add_option("--epochs", tf.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tf.batch)->capture_default_str();
  train_cmd->add_option("--plateau-window", tf.plateau_window, "Early-stop window in epochs, 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--plateau-tolerance", tf.plateau_tolerance)->capture_default_str();
  train_cmd->add_option("--seeds", tf.seeds, "Comma-separated seeds")->capture_default_str();
  train_cmd->add_option("--out", tf.out, "Results directory (default $SPHEREHEAD_RESULTS or ./results)");
  train_cmd->add_option("--name", tf.name, "Experiment name (default <dataset>-<loss>-<proj|noproj>)");
  train_cmd->add_option("--jobs", tf.jobs, "Seeds trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--hidden", tf.hidden, "Hidden layer widths")->capture_default_str();
  train_cmd->add_option("--feature-dim", tf.feature_dim, "Encoder output width")->capture_default_str();
  train_cmd->add_option("--n-per-class", tf.n_per_class, "Synthetic samples per class")->capture_default_str();
  train_cmd->add_option("--noise", tf.noise, "Spiral noise")->capture_default_str();
  train_cmd->add_option("--classes", tf.classes, "Blob classes")->capture_default_str();
  train_cmd->add_option("--data-seed", tf.data_seed, "Seed for data generation and splitting")->capture_default_str();
  train_cmd->add_option("--train-fraction", tf.train_fraction)->capture_default_str();
  train_cmd->add_option("--subset-per-class", tf.subset_per_class, "CIFAR images kept per class");
  train_cmd->add_option("--downsample", tf.downsample, "CIFAR side length after mean pooling");
  train_cmd->add_option("--delimiter", tf.delimiter, "csv delimiter");
  train_cmd->add_flag("--header", tf.header, "csv has a header line");
  train_cmd->add_option("--label-column", tf.label_column, "csv label column (0-based)");

  std::string run_ref, split = "test", eval_split = "test", out_path = "-", in_path, results;
  std::optional<std::uint64_t> seed;
  char delimiter = ',';

  auto* eval_cmd = app.add_subcommand("eval", "Re-train stored runs and check their recorded accuracy");
  eval_cmd->add_option("--run", run_ref, "Run directory, record file or experiment name")->required();
  eval_cmd->add_option("--seed", seed, "Only this seed");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  auto* project_cmd = app.add_subcommand("project", "Stereographically project rows of a delimited file");
  project_cmd->add_option("--in", in_path, "Input file, - for stdin")->required();
  project_cmd->add_option("--out", out_path, "Output file, - for stdout")->capture_default_str();
  project_cmd->add_option("--delimiter", delimiter)->capture_default_str();

  std::string export_out;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write head-input features of a stored run");
  export_cmd->add_option("--run", run_ref, "Run directory, record file or experiment name")->required();
  export_cmd->add_option("--seed", seed, "Seed to export (default: lowest stored)");
  export_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  export_cmd->add_option("--out", export_out, "Output file, - for stdout")->required();

  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Tabulate stored runs, projection on vs off");
  report_cmd->add_option("--results", results, "Results directory (default $SPHEREHEAD_RESULTS or ./results)");
  report_cmd->add_option("--out", report_out, "Also write the table here");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nrun 'spherehead --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(tf, out, err);
    if (eval_cmd->parsed()) return cmd_eval(run_ref, seed, eval_split, out, err);
    if (project_cmd->parsed()) return cmd_project(in_path, out_path, delimiter, out);
    if (export_cmd->parsed()) return cmd_export(run_ref, seed, split, export_out, out);
    if (report_cmd->parsed()) {
      return cmd_report(results.empty() ? default_results_dir().string() : results, report_out, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace spherehead::cli
