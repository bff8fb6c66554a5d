#pragma once

// Collects evaluation reports from a directory tree and renders a comparison
// table: one row group per classifier (baseline, then each augmented
// objective with its gain over the baseline), one column per target dataset
// and shot setting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hts/config.hpp"
#include "hts/evaluator.hpp"
#include "hts/io.hpp"

namespace hts {

struct ReportEntry {
  std::filesystem::path path;
  MetricsReport report;
  ClassifierKind classifier = ClassifierKind::protonet;
  ObjectiveMode mode = ObjectiveMode::baseline;
};

// Every *.json file under `dir` that parses as a metrics report, in path
// order. Other JSON files are skipped.
inline std::vector<ReportEntry> collect_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ReportEntry> out;
  for (const auto& f : files) {
    try {
      const auto j = nlohmann::json::parse(io::read_file(f));
      ReportEntry entry{f, MetricsReport::from_json(j), {}, {}};
      const RunConfig cfg = parse_config(entry.report.config_snapshot);
      entry.classifier = cfg.train.classifier;
      entry.mode = cfg.train.mode;
      out.push_back(std::move(entry));
    } catch (const nlohmann::json::exception&) {
      continue;
    } catch (const ConfigError&) {
      continue;
    }
  }
  return out;
}

inline std::string mode_row_label(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::baseline: return "baseline";
    case ObjectiveMode::da: return "+DA";
    case ObjectiveMode::ssl: return "+SSL";
    case ObjectiveMode::hts_da: return "+HTS_DA";
    case ObjectiveMode::hts_ssl: return "+HTS_SSL";
  }
  return "?";
}

// Markdown table. When several reports fall into one cell the last one in
// path order wins.
inline std::string render_comparison(const std::vector<ReportEntry>& entries) {
  using Column = std::pair<std::string, std::size_t>;  // target, k_shot
  std::set<Column> columns;
  std::map<ClassifierKind, std::map<ObjectiveMode, std::map<Column, const MetricsReport*>>> cells;
  for (const auto& e : entries) {
    const Column col{e.report.target, e.report.spec.k_shot};
    columns.insert(col);
    cells[e.classifier][e.mode][col] = &e.report;
  }
  auto fmt = [](const char* f, double a, double b) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a, b);
    return std::string(buf);
  };

  std::string out = "| classifier | objective |";
  std::string rule = "|---|---|";
  for (const auto& [target, k] : columns) {
    out += " " + target + " " + std::to_string(k) + "-shot |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (const auto& [kind, modes] : cells) {
    const auto base = modes.find(ObjectiveMode::baseline);
    for (const auto& [mode, row] : modes) {
      out += "| " + to_string(kind) + " | " + mode_row_label(mode) + " |";
      for (const auto& col : columns) {
        auto it = row.find(col);
        if (it == row.end()) {
          out += " - |";
          continue;
        }
        std::string cell = it->second->summary();
        if (mode != ObjectiveMode::baseline && base != modes.end()) {
          auto b = base->second.find(col);
          if (b != base->second.end()) {
            const double delta = it->second->mean_accuracy - b->second->mean_accuracy;
            cell += fmt(" (%+.2f)", delta, 0.0);
          }
        }
        out += " " + cell + " |";
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace hts
