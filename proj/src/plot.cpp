#include "usdrl/plot.hpp"

#include "usdrl/error.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace usdrl {

std::vector<MetricRecord> read_metrics(std::istream& in) {
  std::vector<MetricRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::map<std::string, std::string> kv;
    for (std::string field; fields >> field;) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw ParseError("expected key=value, got '" + field + "'", n);
      kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    for (const char* key : {"step", "domain", "term", "value"}) {
      if (!kv.count(key)) throw ParseError(std::string("missing '") + key + "'", n);
    }
    MetricRecord r;
    try {
      std::size_t used = 0;
      r.step = std::stol(kv["step"], &used);
      if (used != kv["step"].size()) throw std::invalid_argument("step");
      r.value = std::stod(kv["value"], &used);
      if (used != kv["value"].size()) throw std::invalid_argument("value");
    } catch (const std::exception&) {
      throw ParseError("malformed step or value", n);
    }
    r.domain = kv["domain"];
    r.term = kv["term"];
    out.push_back(std::move(r));
  }
  return out;
}

std::map<std::string, Series> metric_series(const std::vector<MetricRecord>& records) {
  std::map<std::string, Series> out;
  for (const auto& r : records) out[r.domain + "/" + r.term].emplace_back(r.step, r.value);
  for (auto& [name, s] : out) std::stable_sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.first < b.first; });
  return out;
}

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

void write_line_chart_svg(std::ostream& out, const std::map<std::string, Series>& series, const std::string& title,
                          int width, int height) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& [name, s] : series) {
    for (const auto& [x, y] : s) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, double(x));
      x1 = std::max(x1, double(x));
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double left = 70, right = 180, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">", left);
  out << buf << escape(title) << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n",
                left, top, pw, ph);
  out << buf;
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0, x = x0 + (x1 - x0) * i / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">%.4g</text>\n",
                  left - 6, py(y) + 4, y);
    out << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">%.0f</text>\n",
                  px(x), top + ph + 18, x);
    out << buf;
  }
  std::size_t k = 0;
  for (const auto& [name, s] : series) {
    const char* color = kPalette[k % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << color << "\" points=\"";
    for (const auto& [x, y] : s) {
      if (!std::isfinite(y)) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(double(x)), py(y));
      out << buf;
    }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"12\" fill=\"%s\">",
                  left + pw + 10, top + 16.0 * static_cast<double>(k) + 12, color);
    out << buf << escape(name) << "</text>\n";
    ++k;
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
  out << "</svg>\n";
}

void write_heatmap_ppm(std::ostream& out, const Matrix& m, double limit, int cell) {
  if (!(limit > 0.0) || cell < 1) throw ArgumentError("heatmap: limit and cell size must be positive");
  const long w = static_cast<long>(m.cols()) * cell, h = static_cast<long>(m.rows()) * cell;
  out << "P6\n" << w << ' ' << h << "\n255\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::string row;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = std::clamp(std::isfinite(m(r, c)) ? m(r, c) / limit : 0.0, -1.0, 1.0);
      // White at zero, red for positive, blue for negative.
      const auto fade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(v))));
      const unsigned char rgb[3] = {v >= 0 ? static_cast<unsigned char>(255) : fade, fade,
                                    v <= 0 ? static_cast<unsigned char>(255) : fade};
      for (int i = 0; i < cell; ++i) row.append(reinterpret_cast<const char*>(rgb), 3);
    }
    for (int i = 0; i < cell; ++i) out << row;
  }
}

}  // namespace usdrl
