#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdlib>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "swgee/csv.hpp"
#include "swgee/errors.hpp"

namespace swgee {

/// Cluster-by-period totals for one trial. Missing cluster-periods are kept
/// in the rectangular grid with size zero and are skipped by every
/// estimating-equation sum downstream.
struct TrialData {
  std::vector<std::string> cluster_ids;    // order of first appearance
  std::vector<std::string> period_labels;  // ascending
  Eigen::MatrixXi sizes;                   // n_ij >= 0
  Eigen::MatrixXi totals;                  // 0 <= y_ij <= n_ij
  Eigen::MatrixXi treatment;               // x_ij in {0,1}

  int n_clusters() const { return static_cast<int>(cluster_ids.size()); }
  int n_periods() const { return static_cast<int>(period_labels.size()); }

  /// Indices of periods with at least one observation in cluster i.
  std::vector<int> observed_periods(int i) const {
    std::vector<int> out;
    for (int j = 0; j < n_periods(); ++j)
      if (sizes(i, j) > 0) out.push_back(j);
    return out;
  }

  double cp_mean(int i, int j) const {
    return static_cast<double>(totals(i, j)) / sizes(i, j);
  }

  bool operator==(const TrialData& o) const {
    return cluster_ids == o.cluster_ids && period_labels == o.period_labels &&
           sizes == o.sizes && totals == o.totals && treatment == o.treatment;
  }
};

struct DesignInfo {
  bool is_stepped_wedge = false;
  /// First treated period index per cluster; empty when never treated.
  std::vector<std::optional<int>> switch_period;
  std::vector<std::string> warnings;
};

namespace detail {

inline bool all_numeric(const std::vector<std::string>& labels) {
  for (const auto& s : labels) {
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) return false;
  }
  return true;
}

/// Period labels sort numerically when they all parse as numbers, otherwise
/// lexicographically; internal indices are the sorted ranks.
inline void sort_period_labels(std::vector<std::string>& labels) {
  if (all_numeric(labels)) {
    std::sort(labels.begin(), labels.end(),
              [](const std::string& a, const std::string& b) {
                const double da = std::strtod(a.c_str(), nullptr);
                const double db = std::strtod(b.c_str(), nullptr);
                if (da != db) return da < db;
                return a < b;
              });
  } else {
    std::sort(labels.begin(), labels.end());
  }
}

inline int parse_binary(const std::string& s, const char* what) {
  const long long v = csv::parse_int(s, what);
  if (v != 0 && v != 1)
    throw Error(errc::schema,
                std::string(what) + " must be 0 or 1, got '" + s + "'");
  return static_cast<int>(v);
}

inline void check_counts(const TrialData& d) {
  for (int i = 0; i < d.n_clusters(); ++i)
    for (int j = 0; j < d.n_periods(); ++j) {
      if (d.sizes(i, j) < 0)
        throw Error(errc::integrity, "negative size at (" + d.cluster_ids[i] +
                                         ", " + d.period_labels[j] + ")");
      if (d.totals(i, j) < 0 || d.totals(i, j) > d.sizes(i, j))
        throw Error(errc::integrity,
                    "event count outside [0, n] at (" + d.cluster_ids[i] +
                        ", " + d.period_labels[j] + ")");
    }
}

}  // namespace detail

/// Aggregate an individual-level file (cluster,period,treatment,outcome) to
/// cluster-period totals. Clusters keep first-appearance order; periods sort
/// ascending. Aggregation is order-invariant by construction.
inline TrialData ingest_individual(std::istream& in) {
  const csv::Table t = csv::read(in);
  const int c_cluster = t.column("cluster");
  const int c_period = t.column("period");
  const int c_treat = t.column("treatment");
  const int c_outcome = t.column("outcome");

  std::vector<std::string> clusters;
  std::map<std::string, int> cluster_index;
  std::vector<std::string> periods;
  std::map<std::string, int> period_seen;
  struct Cell {
    int n = 0;
    int y = 0;
    int treat = -1;
  };
  std::map<std::pair<int, std::string>, Cell> cells;

  for (const auto& row : t.rows) {
    const std::string& cl = row[c_cluster];
    const std::string& pe = row[c_period];
    const int x = detail::parse_binary(row[c_treat], "treatment");
    const int y = detail::parse_binary(row[c_outcome], "outcome");
    auto [it, inserted] =
        cluster_index.emplace(cl, static_cast<int>(clusters.size()));
    if (inserted) clusters.push_back(cl);
    if (period_seen.emplace(pe, 1).second) periods.push_back(pe);
    Cell& cell = cells[{it->second, pe}];
    if (cell.treat >= 0 && cell.treat != x)
      throw Error(errc::integrity, "conflicting treatment within (" + cl +
                                       ", " + pe + ")");
    cell.treat = x;
    cell.n += 1;
    cell.y += y;
  }

  detail::sort_period_labels(periods);
  std::map<std::string, int> period_index;
  for (int j = 0; j < static_cast<int>(periods.size()); ++j)
    period_index[periods[j]] = j;

  TrialData d;
  d.cluster_ids = std::move(clusters);
  d.period_labels = std::move(periods);
  const int I = d.n_clusters(), J = d.n_periods();
  d.sizes = Eigen::MatrixXi::Zero(I, J);
  d.totals = Eigen::MatrixXi::Zero(I, J);
  d.treatment = Eigen::MatrixXi::Zero(I, J);
  for (const auto& [key, cell] : cells) {
    const int i = key.first;
    const int j = period_index.at(key.second);
    d.sizes(i, j) = cell.n;
    d.totals(i, j) = cell.y;
    d.treatment(i, j) = cell.treat;
  }
  detail::check_counts(d);
  return d;
}

/// Read a pre-aggregated file (cluster,period,treatment,n,y).
inline TrialData ingest_cluster_period(std::istream& in) {
  const csv::Table t = csv::read(in);
  const int c_cluster = t.column("cluster");
  const int c_period = t.column("period");
  const int c_treat = t.column("treatment");
  const int c_n = t.column("n");
  const int c_y = t.column("y");

  std::vector<std::string> clusters;
  std::map<std::string, int> cluster_index;
  std::vector<std::string> periods;
  std::map<std::string, int> period_seen;
  struct Cell {
    int n = 0;
    int y = 0;
    int treat = 0;
  };
  std::map<std::pair<int, std::string>, Cell> cells;

  for (const auto& row : t.rows) {
    const std::string& cl = row[c_cluster];
    const std::string& pe = row[c_period];
    const int x = detail::parse_binary(row[c_treat], "treatment");
    const long long n = csv::parse_int(row[c_n], "n");
    const long long y = csv::parse_int(row[c_y], "y");
    if (n < 0) throw Error(errc::integrity, "n < 0 at (" + cl + ", " + pe + ")");
    if (y < 0 || y > n)
      throw Error(errc::integrity,
                  "y outside [0, n] at (" + cl + ", " + pe + ")");
    auto [it, inserted] =
        cluster_index.emplace(cl, static_cast<int>(clusters.size()));
    if (inserted) clusters.push_back(cl);
    if (period_seen.emplace(pe, 1).second) periods.push_back(pe);
    const auto key = std::make_pair(it->second, pe);
    if (cells.count(key))
      throw Error(errc::integrity,
                  "duplicate row for (" + cl + ", " + pe + ")");
    cells[key] = Cell{static_cast<int>(n), static_cast<int>(y), x};
  }

  detail::sort_period_labels(periods);
  std::map<std::string, int> period_index;
  for (int j = 0; j < static_cast<int>(periods.size()); ++j)
    period_index[periods[j]] = j;

  TrialData d;
  d.cluster_ids = std::move(clusters);
  d.period_labels = std::move(periods);
  const int I = d.n_clusters(), J = d.n_periods();
  d.sizes = Eigen::MatrixXi::Zero(I, J);
  d.totals = Eigen::MatrixXi::Zero(I, J);
  d.treatment = Eigen::MatrixXi::Zero(I, J);
  for (const auto& [key, cell] : cells) {
    const int i = key.first;
    const int j = period_index.at(key.second);
    d.sizes(i, j) = cell.n;
    d.totals(i, j) = cell.y;
    d.treatment(i, j) = cell.treat;
  }
  detail::check_counts(d);
  return d;
}

/// Serialize to the cluster-period schema. Emits every grid cell (including
/// n = 0 placeholders) so ingest_cluster_period round-trips exactly.
inline void write_cluster_period(const TrialData& d, std::ostream& os) {
  os << "cluster,period,treatment,n,y\n";
  for (int i = 0; i < d.n_clusters(); ++i)
    for (int j = 0; j < d.n_periods(); ++j) {
      csv::write_field(os, d.cluster_ids[i]);
      os << ',';
      csv::write_field(os, d.period_labels[j]);
      os << ',' << d.treatment(i, j) << ',' << d.sizes(i, j) << ','
         << d.totals(i, j) << '\n';
    }
}

/// Classify the treatment layout. Monotone non-decreasing treatment per
/// cluster (over observed periods) is the stepped-wedge pattern; reversals
/// are recorded as warnings, not errors, since parallel longitudinal designs
/// remain fittable.
inline DesignInfo validate_design(const TrialData& d) {
  DesignInfo info;
  info.is_stepped_wedge = true;
  info.switch_period.resize(d.n_clusters());
  for (int i = 0; i < d.n_clusters(); ++i) {
    int prev = -1;
    bool monotone = true;
    for (int j = 0; j < d.n_periods(); ++j) {
      if (d.sizes(i, j) == 0) continue;  // unobserved: treatment unknown
      const int x = d.treatment(i, j);
      if (x == 1 && !info.switch_period[i]) info.switch_period[i] = j;
      if (prev == 1 && x == 0) monotone = false;
      prev = x;
    }
    if (!monotone) {
      info.is_stepped_wedge = false;
      info.warnings.push_back("cluster " + d.cluster_ids[i] +
                              ": treatment reverts to control; not a "
                              "stepped-wedge sequence");
    }
  }
  return info;
}

}  // namespace swgee
