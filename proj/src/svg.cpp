#include "molchan/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace molchan {

namespace {

constexpr std::array<const char*, 4> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string escape(const std::string& s) {
  std::string out;
  for (const char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string tick_text(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

} // namespace

std::string render_line_chart(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  double x_lo = std::numeric_limits<double>::infinity();
  double x_hi = -x_lo;
  double y_lo = x_lo;
  double y_hi = -x_lo;
  bool all_positive = true;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) {
      throw std::invalid_argument("render_line_chart: series '" + s.label + "' is ragged");
    }
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) {
        continue;
      }
      x_lo = std::min(x_lo, s.x[k]);
      x_hi = std::max(x_hi, s.x[k]);
      y_lo = std::min(y_lo, s.y[k]);
      y_hi = std::max(y_hi, s.y[k]);
      all_positive = all_positive && s.y[k] > 0.0;
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  }
  const bool log_y = spec.log_y && all_positive;
  auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
  double yl = ty(y_lo);
  double yh = ty(y_hi);
  if (x_hi == x_lo) {
    x_lo -= 0.5, x_hi += 0.5;
  }
  if (yh == yl) {
    yl -= 0.5, yh += 0.5;
  }

  const double left = 70.0;
  const double right = spec.width - 20.0;
  const double top = 40.0;
  const double bottom = spec.height - 50.0;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (right - left); };
  auto py = [&](double y) { return bottom - (ty(y) - yl) / (yh - yl) * (bottom - top); };

  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
      << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(spec.title) << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double fx = x_lo + (x_hi - x_lo) * i / 5.0;
    const double sx = px(fx);
    svg << "<line x1=\"" << sx << "\" y1=\"" << bottom << "\" x2=\"" << sx << "\" y2=\""
        << bottom + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << sx << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">"
        << tick_text(fx) << "</text>\n";
    const double fy = yl + (yh - yl) * i / 5.0;
    const double sy = bottom - (fy - yl) / (yh - yl) * (bottom - top);
    svg << "<line x1=\"" << left - 5 << "\" y1=\"" << sy << "\" x2=\"" << left << "\" y2=\"" << sy
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\">"
        << tick_text(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << spec.height - 12
      << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  svg << "<text transform=\"translate(16," << (top + bottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label)
      << (log_y ? " (log scale)" : "") << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kColors[i % kColors.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (std::isfinite(s.x[k]) && std::isfinite(s.y[k])) {
        svg << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
      }
    }
    svg << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i);
    svg << "<line x1=\"" << right - 130 << "\" y1=\"" << ly << "\" x2=\"" << right - 110
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << right - 105 << "\" y=\"" << ly + 4 << "\">" << escape(s.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

} // namespace molchan
