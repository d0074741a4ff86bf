#pragma once

#include <string>
#include <vector>

namespace msi {

// RFC-4180 CSV: CRLF row endings, fields quoted when they contain commas,
// quotes or newlines. Output is byte-deterministic.
std::string csv_encode(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::string& path);

// Scatter plot of (x, y) points with a least-squares line and a Pearson r
// annotation. SVG 1.1, no timestamps; the config hash and tool version are
// embedded in a comment.
struct ScatterSeries {
  std::vector<double> xs;
  std::vector<double> ys;
  std::string label;
};
std::string svg_scatter(const std::vector<ScatterSeries>& series, const std::string& x_label,
                        const std::string& y_label, const std::string& config_hash);
void write_svg_scatter(const std::string& path, const std::vector<ScatterSeries>& series,
                       const std::string& x_label, const std::string& y_label,
                       const std::string& config_hash);

}  // namespace msi
