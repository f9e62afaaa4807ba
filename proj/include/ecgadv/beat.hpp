#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgadv {

inline constexpr std::size_t kBeatLength = 280;
inline constexpr std::size_t kNumClasses = 4;

/// AAMI beat groups.
enum class Label { N = 0, S = 1, V = 2, F = 3 };

inline constexpr std::array<Label, kNumClasses> kAllLabels{Label::N, Label::S, Label::V, Label::F};

inline std::size_t index_of(Label l) { return static_cast<std::size_t>(l); }
char to_char(Label l);
std::optional<Label> parse_label(std::string_view text);

/// One R-peak-centred window, min-max normalized to [0, 1].
struct Beat {
  std::vector<double> samples;
  Label label = Label::N;
  std::string record_id;
  long r_peak_index = -1;
  bool synthetic = false;
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

ClassCounts class_counts(std::span<const Beat> beats);

}  // namespace ecgadv
