#pragma once

// Accuracy table pairing each (dataset, loss) with and without projection.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"
#include "spherehead/experiment.hpp"
#include "spherehead/heads.hpp"

namespace spherehead::report {

/// "mean±std" with two decimals.
inline std::string format_cell(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", mean, std);
  return buf;
}

namespace detail {

/// Terminal columns of a UTF-8 string (continuation bytes do not count).
inline std::size_t display_width(std::string_view s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

inline std::string pad(const std::string& s, std::size_t width) {
  return s + std::string(width - std::min(width, display_width(s)), ' ');
}

struct Row {
  std::string dataset;
  heads::Family family;
  std::optional<experiment::RunReport> with_projection;
  std::optional<experiment::RunReport> without_projection;
};

}  // namespace detail

/// Renders reports as a table with one row per (dataset, loss) and one column
/// each for projection on and off. The better mean of each pair is prefixed
/// with '*'; equal means (as displayed) get no marker.
inline std::string emit_table(std::span<const experiment::RunReport> reports) {
  if (reports.empty()) throw LayoutError("no run reports to tabulate");
  std::map<std::pair<std::string, int>, detail::Row> rows;
  for (const auto& r : reports) {
    auto& row = rows[{r.dataset, static_cast<int>(r.family)}];
    row.dataset = r.dataset;
    row.family = r.family;
    auto& slot = r.projection ? row.with_projection : row.without_projection;
    if (slot) {
      throw LayoutError("duplicate report for " + r.dataset + "/" + std::string(heads::display_name(r.family)) +
                        " projection=" + (r.projection ? "on" : "off") + " (" + slot->experiment + ", " +
                        r.experiment + ")");
    }
    slot = r;
  }
  std::vector<std::string> missing;
  for (const auto& [key, row] : rows) {
    const std::string name = row.dataset + "/" + std::string(heads::display_name(row.family));
    if (!row.with_projection) missing.push_back(name + " lacks projection=on");
    if (!row.without_projection) missing.push_back(name + " lacks projection=off");
  }
  if (!missing.empty()) {
    std::string msg = "unpaired reports:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw LayoutError(msg);
  }

  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Dataset", "Loss", "Projection: yes", "Projection: no"});
  std::string last_dataset;
  for (const auto& [key, row] : rows) {
    std::string on = format_cell(row.with_projection->mean, row.with_projection->std);
    std::string off = format_cell(row.without_projection->mean, row.without_projection->std);
    if (on != off) {
      const bool on_better = row.with_projection->mean > row.without_projection->mean;
      (on_better ? on : off).insert(0, "*");
    }
    if (!row.with_projection->complete()) on += " (!)";
    if (!row.without_projection->complete()) off += " (!)";
    cells.push_back({row.dataset == last_dataset ? "" : row.dataset, std::string(heads::display_name(row.family)),
                     on, off});
    last_dataset = row.dataset;
  }

  std::vector<std::size_t> width(4, 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], detail::display_width(line[c]));

  std::string out = "Test accuracy (%), mean±population std over seeds\n";
  auto emit = [&](const std::vector<std::string>& line) {
    std::string text;
    for (std::size_t c = 0; c < 4; ++c) text += (c ? " | " : "") + detail::pad(line[c], width[c]);
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + '\n';
  };
  emit(cells.front());
  std::string rule;
  for (std::size_t c = 0; c < 4; ++c) rule += (c ? "-+-" : "") + std::string(width[c], '-');
  out += rule + '\n';
  for (std::size_t i = 1; i < cells.size(); ++i) emit(cells[i]);
  bool any_incomplete = false;
  for (const auto& r : reports) any_incomplete = any_incomplete || !r.complete();
  if (any_incomplete) out += "(!) some seeds failed and are excluded\n";
  return out;
}

}  // namespace spherehead::report
