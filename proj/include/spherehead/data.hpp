#pragma once

// Datasets: synthetic benchmarks, delimited feature files and the CIFAR
// binary batches, plus deterministic train/test splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/ndcore.hpp"
#include "spherehead/random.hpp"

namespace spherehead::data {

/// Feature matrix [N x n] with dense class ids in [0, class_count).
struct Dataset {
  std::string name;
  nd::Tensor features{nd::Shape{0, 0}};
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.shape()[1]; }

  void validate() const {
    if (features.rank() != 2 || features.shape()[0] != labels.size()) {
      throw DimensionError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for features " +
                           nd::to_string(features.shape()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_count) {
        throw IndexError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at row " +
                         std::to_string(i) + " outside [0, " + std::to_string(class_count) + ")");
      }
    }
    if (!features.all_finite()) throw DomainError("dataset '" + name + "' has non-finite features");
  }
};

/// Rows `indices` of `ds`, in that order.
inline Dataset select(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t n = ds.dim();
  Dataset out;
  out.name = ds.name;
  out.class_count = ds.class_count;
  std::vector<double> feats;
  feats.reserve(indices.size() * n);
  for (std::size_t idx : indices) {
    const auto row = ds.features.row(idx);
    feats.insert(feats.end(), row.begin(), row.end());
    out.labels.push_back(ds.labels[idx]);
  }
  out.features = nd::Tensor(nd::Shape{indices.size(), n}, std::move(feats));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic

/// Two interleaved Archimedean spirals around the origin. Class 0 follows
/// t (cos t, sin t) for t evenly spaced in [pi/2, 4 pi]; class 1 is its
/// point-wise negation. Gaussian noise of deviation `noise_sd` is added in
/// those units, then everything is divided by 4 pi (outer radius 1) and
/// centred to zero mean. Rows alternate between the classes.
inline Dataset gen_two_spirals(std::size_t n_per_class, double noise_sd, std::uint64_t seed) {
  if (n_per_class == 0) throw ConfigError("two spirals need at least one point per class");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
  constexpr double t0 = std::numbers::pi / 2.0;
  constexpr double t1 = 4.0 * std::numbers::pi;
  constexpr double scale = 4.0 * std::numbers::pi;
  Rng rng(seed);
  auto noise = [&] { return noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0; };

  Dataset ds;
  ds.name = "spirals";
  ds.class_count = 2;
  std::vector<double> f;
  f.reserve(4 * n_per_class);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    const double t = n_per_class == 1 ? t0 : t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n_per_class - 1);
    const double x = t * std::cos(t), y = t * std::sin(t);
    const double e0 = noise(), e1 = noise(), e2 = noise(), e3 = noise();
    f.push_back((x + e0) / scale);
    f.push_back((y + e1) / scale);
    f.push_back((-x + e2) / scale);
    f.push_back((-y + e3) / scale);
    ds.labels.push_back(0);
    ds.labels.push_back(1);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t r = 0; r < ds.labels.size(); ++r) {
    mx += f[2 * r];
    my += f[2 * r + 1];
  }
  mx /= static_cast<double>(ds.labels.size());
  my /= static_cast<double>(ds.labels.size());
  for (std::size_t r = 0; r < ds.labels.size(); ++r) {
    f[2 * r] -= mx;
    f[2 * r + 1] -= my;
  }
  ds.features = nd::Tensor(nd::Shape{ds.labels.size(), 2}, std::move(f));
  return ds;
}

/// `classes` isotropic 2-D Gaussians of deviation `spread` whose means sit
/// equally spaced on a circle of `radius` around the origin, starting at
/// (radius, 0). Rows are grouped by class.
inline Dataset gen_gaussian_blobs(std::size_t classes, std::size_t n_per_class, double spread, double radius,
                                  std::uint64_t seed) {
  if (classes < 2) throw ConfigError("blobs need at least two classes");
  if (n_per_class == 0) throw ConfigError("blobs need at least one point per class");
  if (!(spread >= 0.0)) throw ConfigError("spread must be non-negative");
  Rng rng(seed);
  Dataset ds;
  ds.name = "blobs";
  ds.class_count = classes;
  std::vector<double> f;
  f.reserve(2 * classes * n_per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    const double mx = radius * std::cos(angle), my = radius * std::sin(angle);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double ex = spread > 0.0 ? spread * rng.normal() : 0.0;
      const double ey = spread > 0.0 ? spread * rng.normal() : 0.0;
      f.push_back(mx + ex);
      f.push_back(my + ey);
      ds.labels.push_back(c);
    }
  }
  ds.features = nd::Tensor(nd::Shape{ds.labels.size(), 2}, std::move(f));
  return ds;
}

// ---------------------------------------------------------------------------
// Delimited text

struct DelimitedOptions {
  char delimiter = ',';
  bool header = false;
  std::size_t label_column = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_cells(std::string_view line, char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

/// Parses rows of numbers. Blank lines are skipped; line and column numbers
/// in errors are 1-based. Labels must be integer-valued and are remapped to
/// dense ids in ascending order of their original values.
inline Dataset parse_delimited(std::istream& in, const DelimitedOptions& opts, std::string name = "csv") {
  std::string line;
  std::size_t line_no = 0;
  if (opts.header) {
    std::getline(in, line);
    ++line_no;
  }
  std::size_t columns = 0;
  std::vector<double> feats;
  std::vector<long long> raw_labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_cells(line, opts.delimiter);
    if (columns == 0) {
      columns = cells.size();
      if (opts.label_column >= columns) {
        throw ParseError("line " + std::to_string(line_no) + ": label column " +
                         std::to_string(opts.label_column + 1) + " but only " + std::to_string(columns) +
                         " columns");
      }
      if (columns < 2) throw ParseError("line " + std::to_string(line_no) + ": need a label and at least one feature");
    } else if (cells.size() != columns) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                       " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      const std::string where = "line " + std::to_string(line_no) + ", column " + std::to_string(c + 1);
      if (!v) throw ParseError(where + ": non-numeric cell '" + std::string(detail::trim(cells[c])) + "'");
      if (!std::isfinite(*v)) throw ParseError(where + ": non-finite value");
      if (c == opts.label_column) {
        if (*v != std::floor(*v) || std::abs(*v) > 9.0e15) throw ParseError(where + ": label is not an integer");
        raw_labels.push_back(static_cast<long long>(*v));
      } else {
        feats.push_back(*v);
      }
    }
  }
  if (raw_labels.empty()) throw ParseError("no data rows");

  std::map<long long, std::size_t> dense;
  for (long long l : raw_labels) dense.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [_, id] : dense) id = next++;

  Dataset ds;
  ds.name = std::move(name);
  ds.class_count = dense.size();
  for (long long l : raw_labels) ds.labels.push_back(dense.at(l));
  ds.features = nd::Tensor(nd::Shape{raw_labels.size(), columns - 1}, std::move(feats));
  return ds;
}

/// Unlabeled rows of numbers as an [N x n] matrix. Same error reporting as
/// parse_delimited.
inline nd::Tensor parse_matrix(std::istream& in, char delimiter = ',') {
  std::string line;
  std::size_t line_no = 0, columns = 0, rows = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_cells(line, delimiter);
    if (columns == 0) {
      columns = cells.size();
    } else if (cells.size() != columns) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                       " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      const std::string where = "line " + std::to_string(line_no) + ", column " + std::to_string(c + 1);
      if (!v) throw ParseError(where + ": non-numeric cell '" + std::string(detail::trim(cells[c])) + "'");
      if (!std::isfinite(*v)) throw ParseError(where + ": non-finite value");
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError("no data rows");
  return nd::Tensor(nd::Shape{rows, columns}, std::move(values));
}

inline Dataset load_delimited(const std::filesystem::path& path, const DelimitedOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return parse_delimited(in, opts, path.stem().string());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Formats a double so that parsing it back yields the same bits.
inline std::string format_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Writes "label, f1, ..., fn" rows with 17 significant digits, the layout
/// load_delimited reads with label_column = 0.
inline void write_delimited(std::ostream& out, const Dataset& ds, char delimiter = ',') {
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out << ds.labels[r];
    for (double v : ds.features.row(r)) out << delimiter << format_exact(v);
    out << '\n';
  }
}

inline void save_delimited(const std::filesystem::path& path, const Dataset& ds, char delimiter = ',') {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_delimited(out, ds, delimiter);
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// CIFAR binary batches

enum class CifarVariant { cifar10, cifar100 };
enum class CifarPart { train, test };

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

/// Bytes per record: label byte(s) followed by 3072 planar RGB bytes.
/// CIFAR-100 records carry the coarse label byte before the fine one.
inline constexpr std::size_t cifar_record_size(CifarVariant v) {
  return (v == CifarVariant::cifar10 ? 1 : 2) + kCifarPixels;
}

inline std::vector<std::string> cifar_files(CifarVariant v, CifarPart part) {
  if (v == CifarVariant::cifar10) {
    if (part == CifarPart::test) return {"test_batch.bin"};
    return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
  }
  return {part == CifarPart::train ? "train.bin" : "test.bin"};
}

struct CifarOptions {
  /// Keep exactly this many records per class, chosen by `seed`.
  std::optional<std::size_t> subset_per_class;
  /// Mean-pool each 32x32 channel down to k x k (k must divide 32).
  std::optional<std::size_t> downsample_to;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<unsigned char> read_binary(const std::filesystem::path& path, std::size_t record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % record != 0) {
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a positive multiple of the record size " + std::to_string(record));
  }
  return bytes;
}

}  // namespace detail

/// Loads one part of a CIFAR binary distribution. Pixels are scaled to
/// [0, 1] and flattened channel-major (R plane, G plane, B plane). CIFAR-100
/// uses the fine label.
inline Dataset load_cifar_binary(const std::filesystem::path& dir, CifarVariant variant, CifarPart part,
                                 const CifarOptions& opts = {}) {
  const std::size_t record = cifar_record_size(variant);
  const std::size_t label_offset = variant == CifarVariant::cifar10 ? 0 : 1;
  const std::size_t classes = variant == CifarVariant::cifar10 ? 10 : 100;
  const std::size_t side = opts.downsample_to.value_or(kCifarSide);
  if (side == 0 || kCifarSide % side != 0) {
    throw ConfigError("downsample size " + std::to_string(side) + " must divide 32");
  }
  const std::size_t block = kCifarSide / side;
  const auto files = cifar_files(variant, part);
  for (const auto& f : files)
    if (!std::filesystem::exists(dir / f)) throw IoError("missing CIFAR file " + (dir / f).string());

  // First pass: labels only, to choose the per-class subset.
  struct Ref {
    std::size_t file, index, label;
  };
  std::vector<Ref> refs;
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    const auto bytes = detail::read_binary(dir / files[fi], record);
    for (std::size_t r = 0; r < bytes.size() / record; ++r) {
      const std::size_t label = bytes[r * record + label_offset];
      if (label >= classes) {
        throw FormatError(files[fi] + ": record " + std::to_string(r) + " has label " + std::to_string(label));
      }
      refs.push_back({fi, r, label});
    }
  }
  if (opts.subset_per_class) {
    const std::size_t k = *opts.subset_per_class;
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < refs.size(); ++i) by_class[refs[i].label].push_back(i);
    Rng rng(opts.seed);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < classes; ++c) {
      if (by_class[c].size() < k) {
        throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                          " records, fewer than the requested " + std::to_string(k));
      }
      rng.shuffle(std::span<std::size_t>(by_class[c]));
      keep.insert(keep.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(keep.begin(), keep.end());
    std::vector<Ref> chosen;
    chosen.reserve(keep.size());
    for (std::size_t i : keep) chosen.push_back(refs[i]);
    refs = std::move(chosen);
  }

  const std::size_t dim = 3 * side * side;
  Dataset ds;
  ds.name = variant == CifarVariant::cifar10 ? "cifar10" : "cifar100";
  ds.class_count = classes;
  std::vector<double> feats(refs.size() * dim, 0.0);
  const double norm = 1.0 / (255.0 * static_cast<double>(block * block));
  std::size_t row = 0;
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    const auto first = std::find_if(refs.begin(), refs.end(), [&](const Ref& r) { return r.file == fi; });
    if (first == refs.end()) continue;
    const auto bytes = detail::read_binary(dir / files[fi], record);
    for (auto it = first; it != refs.end() && it->file == fi; ++it, ++row) {
      const unsigned char* px = bytes.data() + it->index * record + label_offset + 1;
      double* out = feats.data() + row * dim;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < kCifarSide; ++y)
          for (std::size_t x = 0; x < kCifarSide; ++x)
            out[(c * side + y / block) * side + x / block] += px[(c * kCifarSide + y) * kCifarSide + x];
      for (std::size_t i = 0; i < dim; ++i) out[i] *= norm;
      ds.labels.push_back(it->label);
    }
  }
  ds.features = nd::Tensor(nd::Shape{refs.size(), dim}, std::move(feats));
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t shuffle_seed = 0;
};

/// Shuffled partition; the train side gets round(train_fraction * N) rows.
/// Both sides keep the full class count.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw ConfigError("split of " + std::to_string(n) + " rows at " + std::to_string(spec.train_fraction) +
                      " leaves one side empty");
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(spec.shuffle_seed);
  rng.shuffle(std::span<std::size_t>(perm));
  auto train = select(ds, std::span<const std::size_t>(perm).first(n_train));
  auto test = select(ds, std::span<const std::size_t>(perm).subspan(n_train));
  return {std::move(train), std::move(test)};
}

}  // namespace spherehead::data
