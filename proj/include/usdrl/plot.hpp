#pragma once

// Metric-log parsing and dependency-free image output: SVG line charts for
// loss curves and binary PPM heatmaps for correlation matrices.

#include "usdrl/params.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace usdrl {

struct MetricRecord {
  long step = 0;
  std::string domain;
  std::string term;
  double value = 0.0;
};

/// Parses "step=<int> domain=<name> term=<name> value=<float>" lines. Blank
/// lines are skipped; anything else raises ParseError.
std::vector<MetricRecord> read_metrics(std::istream& in);

using Series = std::vector<std::pair<long, double>>;

/// Groups records into "<domain>/<term>" series ordered by step.
std::map<std::string, Series> metric_series(const std::vector<MetricRecord>& records);

/// Line chart of the named series on shared axes.
void write_line_chart_svg(std::ostream& out, const std::map<std::string, Series>& series, const std::string& title,
                          int width = 800, int height = 480);

/// Diverging blue-white-red heatmap over [-limit, limit], cell x cell pixels
/// per entry, as binary PPM (P6).
void write_heatmap_ppm(std::ostream& out, const Matrix& m, double limit = 1.0, int cell = 8);

}  // namespace usdrl
