#pragma once

#include "geoflow/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace geoflow::io {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string colour = "#1f77b4";
  bool line = true;  // false draws markers only
};

/// Minimal standalone SVG renderer for line plots, scatter plots and heat maps.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label, int width = 640, int height = 420);

  void add(Series s) { series_.push_back(std::move(s)); }
  /// values(i, j) is drawn at (x_axis[j], y_axis[i]); colour scale from min to max.
  void heatmap(Vector x_axis, Vector y_axis, Matrix values);

  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string title_, x_label_, y_label_;
  int width_, height_;
  std::vector<Series> series_;
  Vector hx_, hy_;
  Matrix hv_;
};

/// Escapes &, <, >, " for XML text and attributes.
std::string xml_escape(const std::string& s);

}  // namespace geoflow::io
