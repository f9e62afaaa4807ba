#include "plot.hpp"

#include <algorithm>
#include <cstdio>

namespace ecgadv::cli {
namespace {

constexpr double kWidth = 640, kHeight = 320;
constexpr double kLeft = 56, kRight = 16, kTop = 32, kBottom = 44;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

double px(double x) { return kLeft + x / kPlotXMax * (kWidth - kLeft - kRight); }
double py(double y) { return kHeight - kBottom - std::clamp(y, 0.0, kPlotYMax) / kPlotYMax * (kHeight - kTop - kBottom); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_panel_svg(const Panel& panel) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
       "\" viewBox=\"0 0 " + fmt(kWidth) + " " + fmt(kHeight) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" +
       escape(panel.title) + "</text>\n";

  // Axes box and ticks.
  s += "<g stroke=\"#444\" fill=\"none\">\n";
  s += "<rect x=\"" + fmt(px(0)) + "\" y=\"" + fmt(py(kPlotYMax)) + "\" width=\"" + fmt(px(kPlotXMax) - px(0)) +
       "\" height=\"" + fmt(py(0) - py(kPlotYMax)) + "\"/>\n";
  for (double x = 0; x <= kPlotXMax; x += 70)
    s += "<line x1=\"" + fmt(px(x)) + "\" y1=\"" + fmt(py(0)) + "\" x2=\"" + fmt(px(x)) + "\" y2=\"" +
         fmt(py(0) + 4) + "\"/>\n";
  for (double y = 0; y <= kPlotYMax + 1e-9; y += 0.25)
    s += "<line x1=\"" + fmt(px(0) - 4) + "\" y1=\"" + fmt(py(y)) + "\" x2=\"" + fmt(px(0)) + "\" y2=\"" +
         fmt(py(y)) + "\"/>\n";
  s += "</g>\n<g fill=\"#222\">\n";
  for (double x = 0; x <= kPlotXMax; x += 70)
    s += "<text x=\"" + fmt(px(x)) + "\" y=\"" + fmt(py(0) + 16) + "\" text-anchor=\"middle\">" +
         std::to_string(static_cast<int>(x)) + "</text>\n";
  for (double y = 0; y <= kPlotYMax + 1e-9; y += 0.25)
    s += "<text x=\"" + fmt(px(0) - 7) + "\" y=\"" + fmt(py(y) + 4) + "\" text-anchor=\"end\">" + fmt(y) +
         "</text>\n";
  s += "<text x=\"" + fmt(px(kPlotXMax / 2)) + "\" y=\"" + fmt(kHeight - 8) +
       "\" text-anchor=\"middle\">sample</text>\n";
  s += "<text x=\"14\" y=\"" + fmt(py(kPlotYMax / 2)) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fmt(py(kPlotYMax / 2)) + ")\">amplitude</text>\n</g>\n";

  for (std::size_t t = 0; t < panel.traces.size(); ++t) {
    const Trace& trace = panel.traces[t];
    const char* color = kColors[t % std::size(kColors)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
      if (i) s += ' ';
      s += fmt(px(static_cast<double>(i))) + "," + fmt(py(trace.samples[i]));
    }
    s += "\"/>\n";
    const double ly = kTop + 6 + 14.0 * t;
    s += "<line x1=\"" + fmt(kWidth - 150) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(kWidth - 130) + "\" y2=\"" +
         fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt(kWidth - 125) + "\" y=\"" + fmt(ly + 4) + "\">" + escape(trace.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace ecgadv::cli
