#include "geoflow/io/svg.hpp"
#include "geoflow/io/container.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace geoflow::io {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// Viridis-like ramp through five anchor colours.
std::string ramp(double u) {
  static const double anchors[5][3] = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  u = std::clamp(std::isfinite(u) ? u : 0.0, 0.0, 1.0) * 4.0;
  const int k = std::min(3, static_cast<int>(u));
  const double f = u - k;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(anchors[k][0] + f * (anchors[k + 1][0] - anchors[k][0])),
                static_cast<int>(anchors[k][1] + f * (anchors[k + 1][1] - anchors[k][1])),
                static_cast<int>(anchors[k][2] + f * (anchors[k + 1][2] - anchors[k][2])));
  return buf;
}

}  // namespace

SvgPlot::SvgPlot(std::string title, std::string x_label, std::string y_label, int width, int height)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)),
      width_(width), height_(height) {}

void SvgPlot::heatmap(Vector x_axis, Vector y_axis, Matrix values) {
  if (values.rows() != y_axis.size() || values.cols() != x_axis.size())
    throw std::invalid_argument("heat map values do not match axes");
  hx_ = std::move(x_axis);
  hy_ = std::move(y_axis);
  hv_ = std::move(values);
}

std::string SvgPlot::str() const {
  const double left = 64, right = 20, top = 36, bottom = 48;
  const double pw = width_ - left - right, ph = height_ - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto extend = [](double v, double& lo, double& hi) {
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  };
  for (const auto& s : series_) {
    for (double v : s.x) extend(v, x0, x1);
    for (double v : s.y) extend(v, y0, y1);
  }
  for (Index i = 0; i < hx_.size(); ++i) extend(hx_[i], x0, x1);
  for (Index i = 0; i < hy_.size(); ++i) extend(hy_[i], y0, y1);
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + ph - (v - y0) / (y1 - y0) * ph; };

  std::string o = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width_) + "\" height=\"" +
       std::to_string(height_) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(width_ / 2.0) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       xml_escape(title_) + "</text>\n";

  if (hv_.size() > 0) {
    const double lo = hv_.minCoeff(), hi = hv_.maxCoeff();
    const double cw = pw / static_cast<double>(hx_.size()), ch = ph / static_cast<double>(hy_.size());
    for (Index i = 0; i < hv_.rows(); ++i)
      for (Index j = 0; j < hv_.cols(); ++j) {
        const double u = hi > lo ? (hv_(i, j) - lo) / (hi - lo) : 0.0;
        o += "<rect x=\"" + num(left + j * cw) + "\" y=\"" + num(top + ph - (i + 1) * ch) + "\" width=\"" +
             num(cw + 0.5) + "\" height=\"" + num(ch + 0.5) + "\" fill=\"" + ramp(u) + "\"/>\n";
      }
    o += "<text x=\"" + num(width_ - right) + "\" y=\"" + num(top - 6) + "\" text-anchor=\"end\">range " +
         tick(lo) + " to " + tick(hi) + "</text>\n";
  }

  o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + tick(xv) +
         "</text>\n";
    o += "<text x=\"" + num(left - 6) + "\" y=\"" + num(sy(yv) + 4) + "\" text-anchor=\"end\">" + tick(yv) +
         "</text>\n";
  }
  o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height_ - 10.0) + "\" text-anchor=\"middle\">" +
       xml_escape(x_label_) + "</text>\n";
  o += "<text transform=\"translate(14," + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       xml_escape(y_label_) + "</text>\n";

  int legend_row = 0;
  for (const auto& s : series_) {
    if (s.line) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        pts += num(sx(s.x[i])) + "," + num(sy(s.y[i])) + " ";
      }
      o += "<polyline fill=\"none\" stroke=\"" + s.colour + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o += "<circle cx=\"" + num(sx(s.x[i])) + "\" cy=\"" + num(sy(s.y[i])) + "\" r=\"1.8\" fill=\"" + s.colour +
             "\" fill-opacity=\"0.6\"/>\n";
      }
    }
    if (!s.label.empty()) {
      const double ly = top + 12 + 14 * legend_row++;
      o += "<rect x=\"" + num(left + 8) + "\" y=\"" + num(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           s.colour + "\"/>\n";
      o += "<text x=\"" + num(left + 22) + "\" y=\"" + num(ly + 1) + "\">" + xml_escape(s.label) + "</text>\n";
    }
  }
  o += "</svg>\n";
  return o;
}

void SvgPlot::write(const std::filesystem::path& path) const { write_atomic(path, str()); }

}  // namespace geoflow::io
