#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lattice/csv.hpp"

namespace lattice {

//! Minimal static SVG line/scatter plots. CSV stays the authoritative
//! output; these are conveniences for eyeballing results.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void set_log_x(bool v) { log_x_ = v; }

  void add_line(const std::vector<double>& x, const std::vector<double>& y,
                const std::string& label) {
    add_series(x, y, label, false);
  }

  void add_scatter(const std::vector<double>& x, const std::vector<double>& y,
                   const std::string& label) {
    add_series(x, y, label, true);
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("SvgPlot: cannot open " + path);
    const double w = 740, h = 520;
    const double ml = 80, mr = 170, mt = 50, mb = 60;

    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    double y_lo = x_lo, y_hi = -x_lo;
    for (const auto& s : series_) {
      for (double v : s.x) {
        const double t = tx(v);
        x_lo = std::min(x_lo, t);
        x_hi = std::max(x_hi, t);
      }
      for (double v : s.y) {
        y_lo = std::min(y_lo, v);
        y_hi = std::max(y_hi, v);
      }
    }
    if (!(x_hi > x_lo)) { x_lo -= 1.0; x_hi += 1.0; }
    if (!(y_hi > y_lo)) { y_lo -= 1.0; y_hi += 1.0; }
    const double xpad = 0.03 * (x_hi - x_lo), ypad = 0.06 * (y_hi - y_lo);
    x_lo -= xpad; x_hi += xpad; y_lo -= ypad; y_hi += ypad;

    auto px = [&](double v) { return ml + (tx(v) - x_lo) / (x_hi - x_lo) * (w - ml - mr); };
    auto py = [&](double v) { return h - mb - (v - y_lo) / (y_hi - y_lo) * (h - mt - mb); };

    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "' viewBox='0 0 " << w << " " << h << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>"
        << title_ << "</text>\n";
    out << "<rect x='" << ml << "' y='" << mt << "' width='" << w - ml - mr << "' height='"
        << h - mt - mb << "' fill='none' stroke='black'/>\n";

    for (int k = 0; k <= 5; ++k) {
      const double fx = x_lo + k * (x_hi - x_lo) / 5;
      const double fy = y_lo + k * (y_hi - y_lo) / 5;
      const double gx = ml + k * (w - ml - mr) / 5;
      const double gy = h - mb - k * (h - mt - mb) / 5;
      out << "<line x1='" << gx << "' y1='" << h - mb << "' x2='" << gx << "' y2='"
          << h - mb + 5 << "' stroke='black'/>\n";
      out << "<text x='" << gx << "' y='" << h - mb + 20
          << "' text-anchor='middle' font-size='11'>" << tick_label(log_x_ ? std::pow(10.0, fx) : fx)
          << "</text>\n";
      out << "<line x1='" << ml - 5 << "' y1='" << gy << "' x2='" << ml << "' y2='" << gy
          << "' stroke='black'/>\n";
      out << "<text x='" << ml - 8 << "' y='" << gy + 4
          << "' text-anchor='end' font-size='11'>" << tick_label(fy) << "</text>\n";
    }
    out << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 15
        << "' text-anchor='middle' font-size='13'>" << xlabel_ << "</text>\n";
    out << "<text x='20' y='" << (mt + h - mb) / 2
        << "' text-anchor='middle' font-size='13' transform='rotate(-90 20 "
        << (mt + h - mb) / 2 << ")'>" << ylabel_ << "</text>\n";

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
    for (std::size_t s = 0; s < series_.size(); ++s) {
      const char* color = colors[s % 8];
      if (series_[s].scatter) {
        for (std::size_t i = 0; i < series_[s].x.size(); ++i)
          out << "<circle cx='" << px(series_[s].x[i]) << "' cy='" << py(series_[s].y[i])
              << "' r='3.5' fill='" << color << "'/>\n";
      } else {
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < series_[s].x.size(); ++i)
          out << px(series_[s].x[i]) << "," << py(series_[s].y[i]) << " ";
        out << "'/>\n";
      }
      const double ly = mt + 18 + 18 * s;
      out << "<line x1='" << w - mr + 10 << "' y1='" << ly << "' x2='" << w - mr + 32
          << "' y2='" << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
      out << "<text x='" << w - mr + 38 << "' y='" << ly + 4 << "' font-size='12'>"
          << series_[s].label << "</text>\n";
    }
    out << "</svg>\n";
  }

 private:
  struct Series {
    std::vector<double> x, y;
    std::string label;
    bool scatter;
  };

  void add_series(const std::vector<double>& x, const std::vector<double>& y,
                  const std::string& label, bool scatter) {
    if (x.size() != y.size()) throw std::invalid_argument("SvgPlot: size mismatch");
    series_.push_back({x, y, label, scatter});
  }

  double tx(double v) const { return log_x_ ? std::log10(std::max(v, 1e-300)) : v; }

  static std::string tick_label(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
  }

  std::string title_, xlabel_, ylabel_;
  bool log_x_ = false;
  std::vector<Series> series_;
};

} // namespace lattice
