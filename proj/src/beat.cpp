#include "ecgadv/beat.hpp"

namespace ecgadv {

char to_char(Label l) {
  switch (l) {
    case Label::N: return 'N';
    case Label::S: return 'S';
    case Label::V: return 'V';
    case Label::F: return 'F';
  }
  return '?';
}

std::optional<Label> parse_label(std::string_view text) {
  if (text.size() != 1) return std::nullopt;
  switch (text[0]) {
    case 'N': return Label::N;
    case 'S': return Label::S;
    case 'V': return Label::V;
    case 'F': return Label::F;
    default: return std::nullopt;
  }
}

ClassCounts class_counts(std::span<const Beat> beats) {
  ClassCounts counts{};
  for (const auto& b : beats) ++counts[index_of(b.label)];
  return counts;
}

}  // namespace ecgadv
