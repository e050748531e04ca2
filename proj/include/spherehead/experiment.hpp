#pragma once

// Multi-seed experiment runner and the plain-text results store
// (results/<experiment>/<seed>.txt).

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "spherehead/data.hpp"
#include "spherehead/errors.hpp"
#include "spherehead/heads.hpp"
#include "spherehead/train.hpp"

namespace spherehead::experiment {

enum class DataSource { spirals, blobs, csv, cifar10, cifar100 };

inline std::string_view to_string(DataSource s) {
  switch (s) {
    case DataSource::spirals: return "spirals";
    case DataSource::blobs: return "blobs";
    case DataSource::csv: return "csv";
    case DataSource::cifar10: return "cifar10";
    case DataSource::cifar100: return "cifar100";
  }
  return "?";
}

/// Where the data comes from and how it is split. Synthetic sets and
/// delimited files are split by `train_fraction`; CIFAR uses its own
/// train/test files.
struct DataConfig {
  DataSource source = DataSource::spirals;
  std::string path;
  std::size_t n_per_class = 500;
  double noise = 0.1;
  std::size_t classes = 4;
  double spread = 0.4;
  double radius = 1.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  char delimiter = ',';
  bool header = false;
  std::size_t label_column = 0;
  std::optional<std::size_t> subset_per_class;
  std::optional<std::size_t> downsample_to;

  /// Parses "spirals", "blobs", "csv:<path>", "cifar10:<dir>", "cifar100:<dir>".
  static DataConfig from_spec(std::string_view spec) {
    DataConfig cfg;
    const auto colon = spec.find(':');
    const std::string_view kind = spec.substr(0, colon);
    const std::string rest = colon == std::string_view::npos ? "" : std::string(spec.substr(colon + 1));
    if (kind == "spirals") {
      cfg.source = DataSource::spirals;
    } else if (kind == "blobs") {
      cfg.source = DataSource::blobs;
    } else if (kind == "csv") {
      cfg.source = DataSource::csv;
    } else if (kind == "cifar10") {
      cfg.source = DataSource::cifar10;
    } else if (kind == "cifar100") {
      cfg.source = DataSource::cifar100;
    } else {
      throw ConfigError("unknown dataset '" + std::string(spec) + "'");
    }
    const bool needs_path = cfg.source == DataSource::csv || cfg.source == DataSource::cifar10 ||
                            cfg.source == DataSource::cifar100;
    if (needs_path && rest.empty()) throw ConfigError("dataset '" + std::string(kind) + "' needs a path: " + std::string(kind) + ":<path>");
    if (!needs_path && !rest.empty()) throw ConfigError("dataset '" + std::string(kind) + "' takes no path");
    cfg.path = rest;
    return cfg;
  }

  std::string spec() const {
    return path.empty() ? std::string(to_string(source)) : std::string(to_string(source)) + ":" + path;
  }

  /// Short dataset name used to pair runs in reports.
  std::string label() const {
    if (source == DataSource::csv) return std::filesystem::path(path).stem().string();
    return std::string(to_string(source));
  }
};

/// Loads and splits the configured data.
inline std::pair<data::Dataset, data::Dataset> load_split(const DataConfig& cfg) {
  switch (cfg.source) {
    case DataSource::spirals:
      return data::split(data::gen_two_spirals(cfg.n_per_class, cfg.noise, cfg.seed), {cfg.train_fraction, cfg.seed});
    case DataSource::blobs:
      return data::split(data::gen_gaussian_blobs(cfg.classes, cfg.n_per_class, cfg.spread, cfg.radius, cfg.seed),
                         {cfg.train_fraction, cfg.seed});
    case DataSource::csv:
      return data::split(data::load_delimited(cfg.path, {cfg.delimiter, cfg.header, cfg.label_column}),
                         {cfg.train_fraction, cfg.seed});
    case DataSource::cifar10:
    case DataSource::cifar100: {
      const auto variant = cfg.source == DataSource::cifar10 ? data::CifarVariant::cifar10 : data::CifarVariant::cifar100;
      const data::CifarOptions opts{cfg.subset_per_class, cfg.downsample_to, cfg.seed};
      return {data::load_cifar_binary(cfg.path, variant, data::CifarPart::train, opts),
              data::load_cifar_binary(cfg.path, variant, data::CifarPart::test, opts)};
    }
  }
  throw ConfigError("unhandled data source");
}

struct ExperimentConfig {
  std::string name;
  DataConfig data;
  train::ModelConfig model;
  /// optim.seed is replaced by each run's seed.
  train::OptimConfig optim;

  /// "<dataset>-<family>-<proj|noproj>"
  std::string default_name() const {
    return data.label() + "-" + std::string(heads::to_string(model.margin.family)) + "-" +
           (model.projection ? "proj" : "noproj");
  }
};

// ---------------------------------------------------------------------------
// key=value encoding

namespace detail {

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<std::size_t> parse_list(std::string_view s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(',', start);
    const auto item = s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) throw ConfigError("bad integer list '" + std::string(s) + "'");
    out.push_back(v);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

using KeyValues = std::map<std::string, std::string, std::less<>>;

inline const std::string& need(const KeyValues& kv, std::string_view key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("run record lacks '" + std::string(key) + "'");
  return it->second;
}

inline double need_double(const KeyValues& kv, std::string_view key) {
  const auto v = data::detail::parse_double(need(kv, key));
  if (!v) throw ParseError("run record: '" + std::string(key) + "' is not a number");
  return *v;
}

inline std::uint64_t need_uint(const KeyValues& kv, std::string_view key) {
  const std::string& s = need(kv, key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("run record: '" + std::string(key) + "' is not an unsigned integer");
  }
  return v;
}

inline std::optional<std::size_t> optional_uint(const KeyValues& kv, std::string_view key) {
  const auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) return std::nullopt;
  return need_uint(kv, key);
}

}  // namespace detail

/// Self-describing echo of every setting that influences a run, one
/// key=value per line, numbers with 17 significant digits.
inline std::string echo_config(const ExperimentConfig& cfg) {
  using data::format_exact;
  std::ostringstream os;
  const auto& d = cfg.data;
  const auto& m = cfg.model;
  const auto& o = cfg.optim;
  os << "experiment=" << cfg.name << '\n'
     << "data.source=" << to_string(d.source) << '\n'
     << "data.path=" << d.path << '\n'
     << "data.label=" << d.label() << '\n'
     << "data.n_per_class=" << d.n_per_class << '\n'
     << "data.noise=" << format_exact(d.noise) << '\n'
     << "data.classes=" << d.classes << '\n'
     << "data.spread=" << format_exact(d.spread) << '\n'
     << "data.radius=" << format_exact(d.radius) << '\n'
     << "data.seed=" << d.seed << '\n'
     << "data.train_fraction=" << format_exact(d.train_fraction) << '\n'
     << "data.delimiter=" << static_cast<int>(d.delimiter) << '\n'
     << "data.header=" << (d.header ? 1 : 0) << '\n'
     << "data.label_column=" << d.label_column << '\n'
     << "data.subset_per_class=" << (d.subset_per_class ? std::to_string(*d.subset_per_class) : "") << '\n'
     << "data.downsample_to=" << (d.downsample_to ? std::to_string(*d.downsample_to) : "") << '\n'
     << "model.hidden=" << detail::join(m.hidden) << '\n'
     << "model.feature_dim=" << m.feature_dim << '\n'
     << "model.projection=" << (m.projection ? "on" : "off") << '\n'
     << "margin.family=" << heads::to_string(m.margin.family) << '\n'
     << "margin.m=" << format_exact(m.margin.m) << '\n'
     << "margin.s=" << format_exact(m.margin.s) << '\n'
     << "margin.queue=" << m.margin.queue_capacity << '\n'
     << "margin.psi=" << (m.margin.use_monotone_psi ? "monotone" : "literal") << '\n'
     << "optim.lr=" << format_exact(o.learning_rate) << '\n'
     << "optim.momentum=" << format_exact(o.momentum) << '\n'
     << "optim.batch=" << o.batch_size << '\n'
     << "optim.epochs=" << o.epochs << '\n'
     << "optim.plateau_window=" << o.plateau_window << '\n'
     << "optim.plateau_tolerance=" << format_exact(o.plateau_tolerance) << '\n';
  return os.str();
}

inline ExperimentConfig parse_config(const detail::KeyValues& kv) {
  using namespace detail;
  ExperimentConfig cfg;
  cfg.name = need(kv, "experiment");
  auto& d = cfg.data;
  const std::string& source = need(kv, "data.source");
  d = DataConfig::from_spec(need(kv, "data.path").empty() ? source : source + ":" + need(kv, "data.path"));
  d.n_per_class = need_uint(kv, "data.n_per_class");
  d.noise = need_double(kv, "data.noise");
  d.classes = need_uint(kv, "data.classes");
  d.spread = need_double(kv, "data.spread");
  d.radius = need_double(kv, "data.radius");
  d.seed = need_uint(kv, "data.seed");
  d.train_fraction = need_double(kv, "data.train_fraction");
  d.delimiter = static_cast<char>(need_uint(kv, "data.delimiter"));
  d.header = need_uint(kv, "data.header") != 0;
  d.label_column = need_uint(kv, "data.label_column");
  d.subset_per_class = optional_uint(kv, "data.subset_per_class");
  d.downsample_to = optional_uint(kv, "data.downsample_to");
  auto& m = cfg.model;
  m.hidden = parse_list(need(kv, "model.hidden"));
  m.feature_dim = need_uint(kv, "model.feature_dim");
  m.projection = need(kv, "model.projection") == "on";
  m.margin.family = heads::parse_family(need(kv, "margin.family"));
  m.margin.m = need_double(kv, "margin.m");
  m.margin.s = need_double(kv, "margin.s");
  m.margin.queue_capacity = need_uint(kv, "margin.queue");
  m.margin.use_monotone_psi = need(kv, "margin.psi") != "literal";
  auto& o = cfg.optim;
  o.learning_rate = need_double(kv, "optim.lr");
  o.momentum = need_double(kv, "optim.momentum");
  o.batch_size = need_uint(kv, "optim.batch");
  o.epochs = need_uint(kv, "optim.epochs");
  o.plateau_window = need_uint(kv, "optim.plateau_window");
  o.plateau_tolerance = need_double(kv, "optim.plateau_tolerance");
  return cfg;
}

// ---------------------------------------------------------------------------
// Single runs

/// Outcome of training and evaluating one seed.
struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  train::History history;
  /// Fractions in [0, 1].
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double wall_time_s = 0.0;
};

/// Trains one seed on already-loaded data. Errors are captured in the record.
inline RunRecord run_single(const ExperimentConfig& cfg, std::uint64_t seed, const data::Dataset& train_ds,
                            const data::Dataset& test_ds, train::Model* trained = nullptr) {
  RunRecord rec;
  rec.config = cfg;
  rec.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    const std::size_t classes = std::max(train_ds.class_count, test_ds.class_count);
    train::Model model = train::build_model(cfg.model, train_ds.dim(), classes, seed);
    train::OptimConfig opt = cfg.optim;
    opt.seed = seed;
    rec.history = train::fit(model, train_ds, opt);
    rec.train_accuracy = train::evaluate(model, train_ds);
    rec.test_accuracy = train::evaluate(model, test_ds);
    rec.ok = true;
    if (trained) *trained = std::move(model);
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

inline void write_record(std::ostream& os, const RunRecord& rec) {
  os << "# spherehead run record\n" << echo_config(rec.config) << "seed=" << rec.seed << '\n';
  os << "[history]\n";
  for (const auto& e : rec.history.epochs) {
    os << e.epoch << ' ' << data::format_exact(e.loss) << ' ' << data::format_exact(e.train_accuracy) << '\n';
  }
  os << "[result]\n"
     << "status=" << (rec.ok ? "ok" : "failed") << '\n';
  if (!rec.ok) {
    std::string msg = rec.error;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    os << "error=" << msg << '\n';
  }
  os << "early_stopped=" << (rec.history.early_stopped ? 1 : 0) << '\n'
     << "train_accuracy=" << data::format_exact(rec.train_accuracy) << '\n'
     << "test_accuracy=" << data::format_exact(rec.test_accuracy) << '\n'
     << "wall_time_s=" << data::format_exact(rec.wall_time_s) << '\n';
}

inline RunRecord read_record(std::istream& in, const std::string& where = "run record") {
  detail::KeyValues config, result;
  RunRecord rec;
  std::string line;
  enum { header, history, results } section = header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line == "[history]") {
      section = history;
      continue;
    }
    if (line == "[result]") {
      section = results;
      continue;
    }
    if (section == history) {
      std::istringstream ls(line);
      train::EpochStats e;
      std::string loss, acc;
      if (!(ls >> e.epoch >> loss >> acc)) throw ParseError(where + ": line " + std::to_string(line_no) + ": bad history row");
      const auto lv = data::detail::parse_double(loss);
      const auto av = data::detail::parse_double(acc);
      if (!av) throw ParseError(where + ": line " + std::to_string(line_no) + ": bad history row");
      e.loss = lv.value_or(std::nan(""));
      e.train_accuracy = *av;
      rec.history.epochs.push_back(e);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": line " + std::to_string(line_no) + ": expected key=value");
    (section == header ? config : result)[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    rec.config = parse_config(config);
    rec.seed = detail::need_uint(config, "seed");
    rec.ok = detail::need(result, "status") == "ok";
    if (!rec.ok && result.count("error")) rec.error = result.at("error");
    rec.history.early_stopped = detail::need_uint(result, "early_stopped") != 0;
    rec.train_accuracy = detail::need_double(result, "train_accuracy");
    rec.test_accuracy = detail::need_double(result, "test_accuracy");
    rec.wall_time_s = detail::need_double(result, "wall_time_s");
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  }
  return rec;
}

inline RunRecord read_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run record " + path.string());
  return read_record(in, path.string());
}

/// Writes results/<experiment>/<seed>.txt. Existing records are never
/// overwritten.
inline std::filesystem::path store_record(const std::filesystem::path& root, const RunRecord& rec) {
  const auto dir = root / rec.config.name;
  std::filesystem::create_directories(dir);
  const auto path = dir / (std::to_string(rec.seed) + ".txt");
  if (std::filesystem::exists(path)) throw IoError("run record already exists: " + path.string());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_record(out, rec);
  if (!out) throw IoError("write failed for " + path.string());
  return path;
}

// ---------------------------------------------------------------------------
// Multi-seed reports

/// Per-seed accuracies of one experiment, in percent, with their mean and
/// population standard deviation.
struct RunReport {
  std::string experiment;
  std::string dataset;
  heads::Family family = heads::Family::cce;
  bool projection = false;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_accuracy;
  std::vector<double> wall_time_s;
  std::vector<std::uint64_t> failed_seeds;
  double mean = 0.0;
  double std = 0.0;
  std::string config_echo;

  bool complete() const { return failed_seeds.empty(); }
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population (divide by n) standard deviation.
inline MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

/// Folds run records of one experiment into a report. Failed seeds are
/// listed and excluded from the statistics.
inline RunReport summarize(const ExperimentConfig& cfg, std::span<const RunRecord> runs) {
  RunReport rep;
  rep.experiment = cfg.name;
  rep.dataset = cfg.data.label();
  rep.family = cfg.model.margin.family;
  rep.projection = cfg.model.projection;
  rep.config_echo = echo_config(cfg);
  for (const auto& r : runs) {
    if (!r.ok) {
      rep.failed_seeds.push_back(r.seed);
      continue;
    }
    rep.seeds.push_back(r.seed);
    rep.per_seed_accuracy.push_back(100.0 * r.test_accuracy);
    rep.wall_time_s.push_back(r.wall_time_s);
  }
  const auto ms = mean_std(rep.per_seed_accuracy);
  rep.mean = ms.mean;
  rep.std = ms.std;
  return rep;
}

struct RunOptions {
  /// Worker threads for independent seeds.
  std::size_t jobs = 1;
  /// Results store root; nothing is written when empty.
  std::optional<std::filesystem::path> store;
};

struct ExperimentResult {
  RunReport report;
  std::vector<RunRecord> runs;
};

/// Trains and evaluates every seed on the same data split. Seeds may run
/// on worker threads; records are written to the store in seed-list order.
inline ExperimentResult run_experiment(ExperimentConfig cfg, std::span<const std::uint64_t> seeds,
                                       const RunOptions& opts = {}) {
  if (seeds.empty()) throw ConfigError("run_experiment needs at least one seed");
  if (cfg.name.empty()) cfg.name = cfg.default_name();
  cfg.model.validate();
  cfg.optim.validate();
  const auto [train_ds, test_ds] = load_split(cfg.data);

  std::vector<RunRecord> runs(seeds.size());
  const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, seeds.size());
  if (jobs == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) runs[i] = run_single(cfg, seeds[i], train_ds, test_ds);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) runs[i] = run_single(cfg, seeds[i], train_ds, test_ds);
      });
    }
    for (auto& t : workers) t.join();
  }
  if (opts.store) {
    for (const auto& r : runs) store_record(*opts.store, r);
  }
  return {summarize(cfg, runs), std::move(runs)};
}

/// Reads every experiment directory under `root` back into reports.
inline std::vector<RunReport> load_reports(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("results directory not found: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunReport> reports;
  for (const auto& dir : dirs) {
    std::vector<RunRecord> runs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt") runs.push_back(read_record(entry.path()));
    if (runs.empty()) continue;
    std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });
    reports.push_back(summarize(runs.front().config, runs));
  }
  return reports;
}

}  // namespace spherehead::experiment
