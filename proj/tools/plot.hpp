#pragma once

// Minimal SVG line plots of beats: one panel per class, x in [0, 280]
// samples, y in [0, 1] amplitude.

#include <string>
#include <vector>

namespace ecgadv::cli {

struct Trace {
  std::string name;  // legend text
  std::vector<double> samples;
};

struct Panel {
  std::string title;
  std::vector<Trace> traces;
};

inline constexpr double kPlotXMax = 280.0;
inline constexpr double kPlotYMax = 1.0;

/// Standalone SVG document. Samples outside [0, 1] are drawn clipped.
std::string render_panel_svg(const Panel& panel);

}  // namespace ecgadv::cli
