#ifndef MOLCHAN_SVG_HPP
#define MOLCHAN_SVG_HPP

#include <string>
#include <vector>

namespace molchan {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "time (s)";
  std::string y_label = "response";
  bool log_y = false; // ignored unless every y value is positive
  int width = 720;
  int height = 440;
};

/// Static line chart with axes, tick labels and a legend. At most a handful
/// of series; colors cycle.
std::string render_line_chart(const PlotSpec& spec, const std::vector<PlotSeries>& series);

} // namespace molchan

#endif
