#include "sfda/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sfda {

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

constexpr const char* kSeriesColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                         "#9467bd", "#8c564b"};

}  // namespace

void write_svg_line_plot(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<double>& x, const std::vector<PlotSeries>& series) {
  for (const PlotSeries& s : series) {
    if (s.y.size() != x.size()) {
      throw std::invalid_argument("plot series `" + s.label + "` length mismatch");
    }
  }
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  if (!x.empty()) {
    x_min = *std::min_element(x.begin(), x.end());
    x_max = *std::max_element(x.begin(), x.end());
    bool first = true;
    for (const PlotSeries& s : series) {
      for (double v : s.y) {
        if (!std::isfinite(v)) continue;
        y_min = first ? v : std::min(y_min, v);
        y_max = first ? v : std::max(y_max, v);
        first = false;
      }
    }
  }
  if (x_max - x_min < 1e-12) x_max = x_min + 1.0;
  if (y_max - y_min < 1e-12) y_max = y_min + 1.0;

  constexpr int kW = 640, kH = 420;
  constexpr int kL = 70, kR = 20, kT = 40, kB = 50;
  const double plot_w = kW - kL - kR, plot_h = kH - kT - kB;
  auto sx = [&](double v) { return kL + (v - x_min) / (x_max - x_min) * plot_w; };
  auto sy = [&](double v) { return kT + plot_h - (v - y_min) / (y_max - y_min) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n"
      << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << plot_w << "\" height=\""
      << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double fx = x_min + (x_max - x_min) * t / 4.0;
    const double fy = y_min + (y_max - y_min) * t / 4.0;
    svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << kT + plot_h << "\" x2=\"" << sx(fx)
        << "\" y2=\"" << kT + plot_h + 5 << "\" stroke=\"#333\"/>\n"
        << "<text x=\"" << sx(fx) << "\" y=\"" << kT + plot_h + 18
        << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n"
        << "<line x1=\"" << kL - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << kL << "\" y2=\""
        << sy(fy) << "\" stroke=\"#333\"/>\n"
        << "<text x=\"" << kL - 8 << "\" y=\"" << sy(fy) + 4 << "\" text-anchor=\"end\">"
        << fmt(fy) << "</text>\n";
  }
  svg << "<text x=\"" << kL + plot_w / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << kT + plot_h / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kT + plot_h / 2 << ")\">"
      << xml_escape(y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kSeriesColors[si % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(series[si].y[i])) continue;
      svg << sx(x[i]) << "," << sy(series[si].y[i]) << " ";
    }
    svg << "\"/>\n"
        << "<rect x=\"" << kL + 10 << "\" y=\"" << kT + 8 + 16 * static_cast<int>(si)
        << "\" width=\"12\" height=\"4\" fill=\"" << color << "\"/>\n"
        << "<text x=\"" << kL + 28 << "\" y=\"" << kT + 14 + 16 * static_cast<int>(si) << "\">"
        << xml_escape(series[si].label) << "</text>\n";
  }
  svg << "</svg>\n";
  write_text_file(path, svg.str());
}

}  // namespace sfda
