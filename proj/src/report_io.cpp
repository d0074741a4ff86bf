#include "msinfluence/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "msinfluence/common.hpp"
#include "msinfluence/validation.hpp"

namespace msi {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

void csv_row(std::string& out, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ",";
    out += csv_field(row[i]);
  }
  out += "\r\n";
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string csv_encode(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  csv_row(out, header);
  for (const auto& row : rows) csv_row(out, row);
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("csv: cannot open " + path + " for writing");
  const std::string text = csv_encode(header, rows);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw ConfigError("csv: write failed for " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("csv: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();

  CsvTable table;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    if (!any) {
      table.header = row;
      any = true;
    } else {
      table.rows.push_back(row);
    }
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // swallow; the newline closes the row
    } else if (c == '\n') {
      end_row();
    } else {
      field += c;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return table;
}

std::string svg_scatter(const std::vector<ScatterSeries>& series, const std::string& x_label,
                        const std::string& y_label, const std::string& config_hash) {
  const double width = 640, height = 480;
  const double ml = 70, mr = 20, mt = 20, mb = 50;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (first) {
        xmin = xmax = s.xs[i];
        ymin = ymax = s.ys[i];
        first = false;
      }
      xmin = std::min(xmin, s.xs[i]);
      xmax = std::max(xmax, s.xs[i]);
      ymin = std::min(ymin, s.ys[i]);
      ymax = std::max(ymax, s.ys[i]);
    }
  }
  if (xmax == xmin) {
    xmax += 1;
    xmin -= 1;
  }
  if (ymax == ymin) {
    ymax += 1;
    ymin -= 1;
  }
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.05 * (ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
    << "\" height=\"" << height << "\">\n";
  o << "<!-- msinfluence " << kToolVersion << " config_hash=" << config_hash << " -->\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // axes
  o << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(height - mb) << "\" x2=\"" << fmt(width - mr)
    << "\" y2=\"" << fmt(height - mb) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(ml) << "\" y2=\""
    << fmt(height - mb) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 4.0;
    const double fy = ymin + (ymax - ymin) * t / 4.0;
    o << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(height - mb + 18)
      << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(fx, "%.3g") << "</text>\n";
    o << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(py(fy) + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(fy, "%.3g") << "</text>\n";
  }
  o << "<text x=\"" << fmt((ml + width - mr) / 2) << "\" y=\"" << fmt(height - 12)
    << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n";
  o << "<text x=\"16\" y=\"" << fmt((mt + height - mb) / 2)
    << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << fmt((mt + height - mb) / 2) << ")\">" << y_label << "</text>\n";

  const char* colors[] = {"#1f6fb4", "#d95f02", "#2ca05a", "#9467bd"};
  double legend_y = mt + 14;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = colors[si % 4];
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      o << "<circle cx=\"" << fmt(px(s.xs[i])) << "\" cy=\"" << fmt(py(s.ys[i]))
        << "\" r=\"3\" fill=\"" << color << "\" fill-opacity=\"0.7\"/>\n";
    }
    // least-squares line and Pearson r
    if (s.xs.size() >= 2) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        mx += s.xs[i];
        my += s.ys[i];
      }
      mx /= s.xs.size();
      my /= s.ys.size();
      double sxy = 0, sxx = 0;
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        sxy += (s.xs[i] - mx) * (s.ys[i] - my);
        sxx += (s.xs[i] - mx) * (s.xs[i] - mx);
      }
      double r_text = 0.0;
      bool have_r = false;
      try {
        r_text = pearson_r(s.xs, s.ys);
        have_r = true;
      } catch (const std::invalid_argument&) {
        // degenerate series; no annotation
      }
      if (sxx > 0) {
        const double slope = sxy / sxx;
        const double icept = my - slope * mx;
        o << "<line x1=\"" << fmt(px(xmin)) << "\" y1=\"" << fmt(py(icept + slope * xmin))
          << "\" x2=\"" << fmt(px(xmax)) << "\" y2=\"" << fmt(py(icept + slope * xmax))
          << "\" stroke=\"" << color << "\" stroke-dasharray=\"5,3\"/>\n";
      }
      o << "<text x=\"" << fmt(width - mr - 8) << "\" y=\"" << fmt(legend_y)
        << "\" font-size=\"13\" text-anchor=\"end\" fill=\"" << color << "\">";
      if (!s.label.empty()) o << s.label << ": ";
      if (have_r) o << "r = " << fmt(r_text, "%.3f");
      o << "</text>\n";
      legend_y += 16;
    }
  }
  o << "</svg>\n";
  return o.str();
}

void write_svg_scatter(const std::string& path, const std::vector<ScatterSeries>& series,
                       const std::string& x_label, const std::string& y_label,
                       const std::string& config_hash) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("svg: cannot open " + path + " for writing");
  const std::string text = svg_scatter(series, x_label, y_label, config_hash);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw ConfigError("svg: write failed for " + path);
}

}  // namespace msi
