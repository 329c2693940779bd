#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "sbid/common.hpp"

namespace sbid {

// Boolean coupling structure: entry (k_out, k_in) true means excitation bin
// k_in participates in the regression for output bin k_out. Empty rows are
// legal; the lattice treats them as pass-through bins.
struct DependencyMap {
  Eigen::Index n = 0;
  std::vector<uint8_t> cells;  // row-major, n*n

  DependencyMap() = default;
  explicit DependencyMap(Eigen::Index bins) : n(bins), cells(static_cast<size_t>(bins * bins), 0) {
    if (bins < 1) throw config_error("DependencyMap: bins must be >= 1");
  }

  bool at(Eigen::Index k_out, Eigen::Index k_in) const {
    return cells[static_cast<size_t>(k_out * n + k_in)] != 0;
  }
  void set(Eigen::Index k_out, Eigen::Index k_in, bool v) {
    cells[static_cast<size_t>(k_out * n + k_in)] = v ? 1 : 0;
  }

  std::vector<Eigen::Index> row_support(Eigen::Index k_out) const {
    std::vector<Eigen::Index> s;
    for (Eigen::Index k = 0; k < n; ++k)
      if (at(k_out, k)) s.push_back(k);
    return s;
  }

  bool has_empty_rows() const {
    for (Eigen::Index r = 0; r < n; ++r) {
      bool any = false;
      for (Eigen::Index k = 0; k < n; ++k) any = any || at(r, k);
      if (!any) return true;
    }
    return false;
  }

  Eigen::Index count_true() const {
    Eigen::Index c = 0;
    for (uint8_t v : cells) c += (v != 0);
    return c;
  }

  bool operator==(const DependencyMap& o) const { return n == o.n && cells == o.cells; }
  bool operator!=(const DependencyMap& o) const { return !(*this == o); }

  static DependencyMap full(Eigen::Index bins) {
    DependencyMap m(bins);
    std::fill(m.cells.begin(), m.cells.end(), 1);
    return m;
  }
  static DependencyMap diagonal(Eigen::Index bins) {
    DependencyMap m(bins);
    for (Eigen::Index k = 0; k < bins; ++k) m.set(k, k, true);
    return m;
  }
  // All entries with lo <= |k_out - k_in| <= hi.
  static DependencyMap band(Eigen::Index bins, Eigen::Index lo, Eigen::Index hi) {
    DependencyMap m(bins);
    for (Eigen::Index r = 0; r < bins; ++r)
      for (Eigen::Index k = 0; k < bins; ++k) {
        const Eigen::Index d = r > k ? r - k : k - r;
        if (d >= lo && d <= hi) m.set(r, k, true);
      }
    return m;
  }

  // One row per line, comma-separated 0/1.
  void to_csv(std::ostream& out) const {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k) out << ',';
        out << (at(r, k) ? 1 : 0);
      }
      out << '\n';
    }
  }

  // Compact row strings for JSON headers.
  std::vector<std::string> to_row_strings() const {
    std::vector<std::string> rows;
    rows.reserve(static_cast<size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      std::string s(static_cast<size_t>(n), '0');
      for (Eigen::Index k = 0; k < n; ++k)
        if (at(r, k)) s[static_cast<size_t>(k)] = '1';
      rows.push_back(std::move(s));
    }
    return rows;
  }
  static DependencyMap from_row_strings(const std::vector<std::string>& rows) {
    const Eigen::Index bins = static_cast<Eigen::Index>(rows.size());
    DependencyMap m(bins);
    for (Eigen::Index r = 0; r < bins; ++r) {
      if (static_cast<Eigen::Index>(rows[static_cast<size_t>(r)].size()) != bins)
        throw io_error("DependencyMap: ragged row strings");
      for (Eigen::Index k = 0; k < bins; ++k)
        m.set(r, k, rows[static_cast<size_t>(r)][static_cast<size_t>(k)] == '1');
    }
    return m;
  }
};

}  // namespace sbid
