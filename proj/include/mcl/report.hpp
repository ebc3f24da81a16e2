#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/errors.hpp"
#include "mcl/eval.hpp"
#include "mcl/harness.hpp"

namespace mcl {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  detail::require(!xs.empty(), "mean of an empty sample");
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

/// One (method, momentum, protocol) cell aggregated over seeds.
struct SummaryCell {
  std::string method;
  bool momentum = false;
  EvalProtocol protocol = EvalProtocol::class_il;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;

  bool operator==(const SummaryCell&) const = default;
};

/// Aggregates successful records; failed ones are counted in `failed` but never averaged.
inline std::vector<SummaryCell> summarize(const std::vector<RunRecord>& records, std::size_t* failed = nullptr) {
  std::map<std::tuple<std::string, bool, int>, std::vector<double>> cells;
  std::vector<std::tuple<std::string, bool, int>> order;
  std::size_t n_failed = 0;
  for (const auto& r : records) {
    if (!r.ok()) {
      ++n_failed;
      continue;
    }
    for (int p = 0; p < 2; ++p) {
      auto key = std::make_tuple(r.config.method_label(), r.config.momentum, p);
      if (!cells.count(key)) order.push_back(key);
      cells[key].push_back(p == 0 ? r.final_class_il : r.final_task_il);
    }
  }
  if (failed) *failed = n_failed;
  std::vector<SummaryCell> out;
  for (const auto& key : order) {
    const auto ms = mean_std(cells[key]);
    out.push_back({std::get<0>(key), std::get<1>(key),
                   std::get<2>(key) == 0 ? EvalProtocol::class_il : EvalProtocol::task_il, ms.mean, ms.std,
                   cells[key].size()});
  }
  return out;
}

inline std::string summary_csv(const std::vector<SummaryCell>& cells) {
  std::string out = "method,momentum,protocol,mean,std,n\n";
  for (const auto& c : cells)
    out += c.method + "," + (c.momentum ? "yes" : "no") + "," + std::string(to_string(c.protocol)) + "," +
           detail::fmt_exact(c.mean) + "," + detail::fmt_exact(c.std) + "," + std::to_string(c.n) + "\n";
  return out;
}

inline std::vector<SummaryCell> parse_summary_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<SummaryCell> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != 6) throw ParseError("<summary>", lineno, "expected 6 columns");
    SummaryCell c;
    c.method = std::string(cells[0]);
    c.momentum = cells[1] == "yes";
    c.protocol = cells[2] == "class_il" ? EvalProtocol::class_il : EvalProtocol::task_il;
    double n = 0.0;
    if (!detail::parse_double(cells[3], c.mean) || !detail::parse_double(cells[4], c.std) ||
        !detail::parse_double(cells[5], n))
      throw ParseError("<summary>", lineno, "non-numeric statistic");
    c.n = static_cast<std::size_t>(n);
    out.push_back(c);
  }
  return out;
}

inline std::string fmt_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, std);
  return buf;
}

/// Method x momentum rows with Class-IL and Task-IL columns, two decimals.
inline std::string summary_table(const std::vector<SummaryCell>& cells) {
  std::vector<std::pair<std::string, bool>> rows;
  std::map<std::tuple<std::string, bool, int>, const SummaryCell*> by_key;
  for (const auto& c : cells) {
    const std::pair<std::string, bool> rk{c.method, c.momentum};
    if (std::find(rows.begin(), rows.end(), rk) == rows.end()) rows.push_back(rk);
    by_key[{c.method, c.momentum, c.protocol == EvalProtocol::class_il ? 0 : 1}] = &c;
  }
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-14s %-9s %-18s %-18s\n", "Method", "Momentum", "Class-IL", "Task-IL");
  out += line;
  for (const auto& [method, mom] : rows) {
    std::string cols[2];
    for (int p = 0; p < 2; ++p) {
      const auto it = by_key.find({method, mom, p});
      cols[p] = it == by_key.end() ? "-" : fmt_mean_std(it->second->mean, it->second->std);
    }
    std::snprintf(line, sizeof line, "%-14s %-9s %-18s %-18s\n", method.c_str(), mom ? "yes" : "no",
                  cols[0].c_str(), cols[1].c_str());
    out += line;
  }
  return out;
}

/// Ablation rows averaged over seeds: one line per knob value.
inline std::string ablation_csv(const std::vector<AblationRow>& rows, Knob knob) {
  std::string out = std::string(to_string(knob)) + ",seed,method,status,class_il,task_il\n";
  for (const auto& r : rows)
    out += r.value + "," + std::to_string(r.seed) + "," + r.method + "," + (r.ok ? "ok" : "failed") + "," +
           detail::fmt_exact(r.class_il) + "," + detail::fmt_exact(r.task_il) + "\n";
  return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows, Knob knob) {
  std::vector<std::string> values;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (const auto& r : rows) {
    if (std::find(values.begin(), values.end(), r.value) == values.end()) values.push_back(r.value);
    if (!r.ok) continue;
    acc[r.value].first.push_back(r.class_il);
    acc[r.value].second.push_back(r.task_il);
  }
  char line[160];
  std::string out;
  std::snprintf(line, sizeof line, "%-14s %-14s %-18s %-18s\n", std::string(to_string(knob)).c_str(), "Method",
                "Class-IL", "Task-IL");
  out += line;
  const std::string method = rows.empty() ? "" : rows.front().method;
  for (const auto& v : values) {
    const auto& [c, t] = acc[v];
    std::string cs = "failed", ts = "failed";
    if (!c.empty()) {
      const auto mc = mean_std(c), mt = mean_std(t);
      cs = fmt_mean_std(mc.mean, mc.std);
      ts = fmt_mean_std(mt.mean, mt.std);
    }
    std::snprintf(line, sizeof line, "%-14s %-14s %-18s %-18s\n", v.c_str(), method.c_str(), cs.c_str(), ts.c_str());
    out += line;
  }
  return out;
}

}  // namespace mcl
