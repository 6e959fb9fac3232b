#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgmix/tensor.hpp"

namespace dgmix {

/// Per-target-angle accuracies of one experiment series.
struct ResultTable {
  std::vector<double> angles;
  std::vector<double> accuracies;

  double mean() const {
    double sum = 0;
    for (double a : accuracies) sum += a;
    return accuracies.empty() ? 0.0 : sum / static_cast<double>(accuracies.size());
  }
};

/// How often target samples are assigned to each source domain, one row per
/// target rotation group, rows normalized to sum 1. Empty groups are dropped
/// and recorded in `warnings`.
struct AssignmentMatrix {
  std::vector<double> row_angles;
  std::vector<int> source_domains;     // column labels, ascending
  Tensor values;                       // [rows, domains]
  std::vector<std::size_t> row_counts; // samples behind each row
  std::vector<std::string> warnings;
};

/// Provenance recorded in the JSON mirror of every report.
struct ReportMeta {
  std::uint64_t config_digest = 0;
  std::uint64_t seed_data = 0;
  std::uint64_t seed_init = 0;
  std::uint64_t seed_switch = 0;
};

/// Write all report files under path_prefix: one CSV per table (columns
/// angle, accuracy, one row per target angle), one P2 graymap per assignment
/// matrix (1.0 scales to 255), and a single JSON mirror carrying everything
/// plus the meta block. Identical inputs produce byte-identical files.
/// Returns the written paths.
std::vector<std::string> export_results(const std::vector<ResultTable>& tables,
                                        const std::vector<AssignmentMatrix>& matrices,
                                        const ReportMeta& meta, const std::string& path_prefix);

/// Read back a table written by export_results; exact for every value.
ResultTable parse_results_csv(const std::string& path);

/// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace dgmix
