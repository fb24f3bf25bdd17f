#pragma once
// Small file-emission helpers shared by the engine, evaluation, and the CLI.

#include <string>
#include <vector>

namespace sfda {

// %.17g — enough digits to round-trip a double exactly.
std::string g17(double v);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

struct PlotSeries {
  std::string label;
  std::vector<double> y;
};

// Static line plot with axes, ticks, and a legend; one polyline per series.
// Series must match x in length.
void write_svg_line_plot(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<double>& x, const std::vector<PlotSeries>& series);

}  // namespace sfda
