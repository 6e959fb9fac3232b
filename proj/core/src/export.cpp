#include "dgmix/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "dgmix/eval.hpp"

#include "dgmix/errors.hpp"

#include <json.hpp>

namespace dgmix {

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericError("format_double: value does not format");
  return std::string(buf, end);
}

namespace {

double parse_double(const std::string& s, const std::string& context) {
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw DataError(context + ": \"" + s + "\" is not a number");
  }
  return v;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

std::string table_csv(const ResultTable& t) {
  std::string csv = "angle,accuracy\n";
  for (std::size_t i = 0; i < t.angles.size(); ++i) {
    csv += format_double(t.angles[i]);
    csv += ',';
    csv += format_double(t.accuracies[i]);
    csv += '\n';
  }
  return csv;
}

std::string matrix_pgm(const AssignmentMatrix& m) {
  const std::size_t rows = m.row_angles.size();
  const std::size_t cols = m.source_domains.size();
  std::string pgm = "P2\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = m.values[r * cols + c] * 255.0;
      const long g = std::lround(std::min(255.0, std::max(0.0, v)));
      if (c) pgm += ' ';
      pgm += std::to_string(g);
    }
    pgm += '\n';
  }
  return pgm;
}

std::string numbered(const std::string& prefix, const std::string& stem, std::size_t index,
                     std::size_t total, const std::string& ext) {
  if (total == 1) return prefix + stem + ext;
  return prefix + stem + "-" + std::to_string(index + 1) + ext;
}

}  // namespace

std::vector<std::string> export_results(const std::vector<ResultTable>& tables,
                                        const std::vector<AssignmentMatrix>& matrices,
                                        const ReportMeta& meta, const std::string& path_prefix) {
  std::vector<std::string> written;

  nlohmann::ordered_json doc;
  doc["config_digest"] = meta.config_digest;
  doc["seeds"] = {{"data", meta.seed_data}, {"init", meta.seed_init}, {"switch", meta.seed_switch}};

  doc["tables"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const ResultTable& t = tables[i];
    nlohmann::ordered_json jt;
    jt["angles"] = t.angles;
    jt["accuracies"] = t.accuracies;
    jt["mean"] = t.mean();
    doc["tables"].push_back(jt);

    const std::string path = numbered(path_prefix, "results", i, tables.size(), ".csv");
    write_file(path, table_csv(t));
    written.push_back(path);
  }

  doc["assignments"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    const AssignmentMatrix& m = matrices[i];
    nlohmann::ordered_json jm;
    jm["row_angles"] = m.row_angles;
    jm["source_domains"] = m.source_domains;
    jm["row_counts"] = m.row_counts;
    std::vector<std::vector<double>> rows(m.row_angles.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      rows[r].assign(m.values.ptr() + r * m.source_domains.size(),
                     m.values.ptr() + (r + 1) * m.source_domains.size());
    }
    jm["values"] = rows;
    jm["warnings"] = m.warnings;
    doc["assignments"].push_back(jm);

    const std::string path = numbered(path_prefix, "assignment", i, matrices.size(), ".pgm");
    write_file(path, matrix_pgm(m));
    written.push_back(path);
  }

  const std::string json_path = path_prefix + "results.json";
  write_file(json_path, doc.dump(2) + "\n");
  written.push_back(json_path);
  return written;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string csv = "alpha,angle,accuracy\n";
  for (const SweepRow& row : rows) {
    for (std::size_t i = 0; i < row.table.angles.size(); ++i) {
      csv += format_double(row.alpha);
      csv += ',';
      csv += format_double(row.table.angles[i]);
      csv += ',';
      csv += format_double(row.table.accuracies[i]);
      csv += '\n';
    }
  }
  return csv;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "alpha,angle,accuracy") {
    throw DataError(path + ": expected header \"alpha,angle,accuracy\", got \"" + line + "\"");
  }
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw DataError(path + ": row " + std::to_string(lineno) + " needs three columns");
    }
    const std::string context = path + " row " + std::to_string(lineno);
    const double alpha = parse_double(line.substr(0, c1), context);
    const double angle = parse_double(line.substr(c1 + 1, c2 - c1 - 1), context);
    const double acc = parse_double(line.substr(c2 + 1), context);
    if (rows.empty() || rows.back().alpha != alpha) {
      rows.push_back(SweepRow{alpha, {}});
    }
    rows.back().table.angles.push_back(angle);
    rows.back().table.accuracies.push_back(acc);
    ++lineno;
  }
  return rows;
}

ResultTable parse_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line) || line != "angle,accuracy") {
    throw DataError(path + ": expected header \"angle,accuracy\", got \"" + line + "\"");
  }
  ResultTable t;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw DataError(path + ": row " + std::to_string(row) + " has no comma");
    }
    const std::string context = path + " row " + std::to_string(row);
    t.angles.push_back(parse_double(line.substr(0, comma), context));
    t.accuracies.push_back(parse_double(line.substr(comma + 1), context));
    ++row;
  }
  return t;
}

}  // namespace dgmix
