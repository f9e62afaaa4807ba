#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgadv/data.hpp"
#include "ecgadv/rng.hpp"

namespace ecgadv {

LabelMap LabelMap::aami() {
  LabelMap m;
  for (const char* s : {"N", "L", "R", "e", "j"}) m.entries_[s] = Label::N;
  for (const char* s : {"A", "a", "J", "S"}) m.entries_[s] = Label::S;
  for (const char* s : {"V", "E"}) m.entries_[s] = Label::V;
  m.entries_["F"] = Label::F;
  return m;
}

std::optional<Label> LabelMap::map(std::string_view symbol) const {
  const auto it = entries_.find(std::string(symbol));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

ExtractionStats& ExtractionStats::operator+=(const ExtractionStats& o) {
  boundary_dropped += o.boundary_dropped;
  degenerate_dropped += o.degenerate_dropped;
  unmapped_skipped += o.unmapped_skipped;
  return *this;
}

std::vector<double> normalize_beat(std::span<const double> window) {
  if (window.empty()) throw DataError(DataErrorKind::kDegenerateWindow, "empty window");
  const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
  const double min = *lo, max = *hi;
  if (!(max > min)) throw DataError(DataErrorKind::kDegenerateWindow, "constant window");
  std::vector<double> out(window.size());
  const double range = max - min;
  for (std::size_t i = 0; i < window.size(); ++i) out[i] = (window[i] - min) / range;
  return out;
}

ExtractionResult extract_beats(const RecordSource& record, const LabelMap& map) {
  ExtractionResult result;
  const std::size_t n = record.signal.size();
  for (const auto& ann : record.annotations) {
    const auto label = map.map(ann.symbol);
    if (!label) {
      ++result.stats.unmapped_skipped;
      continue;
    }
    if (ann.sample < kSamplesBeforePeak || ann.sample + kSamplesAfterPeak >= n) {
      ++result.stats.boundary_dropped;
      continue;
    }
    const std::span<const double> window(record.signal.data() + ann.sample - kSamplesBeforePeak,
                                         kBeatLength);
    Beat beat;
    try {
      beat.samples = normalize_beat(window);
    } catch (const DataError&) {
      ++result.stats.degenerate_dropped;
      continue;
    }
    beat.label = *label;
    beat.record_id = record.record_id;
    beat.r_peak_index = static_cast<long>(ann.sample);
    result.beats.push_back(std::move(beat));
  }
  return result;
}

// ---- splits ----------------------------------------------------------------

const char* to_string(SplitMode mode) { return mode == SplitMode::kIntra ? "intra" : "inter"; }

SplitMode parse_split_mode(std::string_view name) {
  if (name == "intra") return SplitMode::kIntra;
  if (name == "inter") return SplitMode::kInter;
  throw std::invalid_argument("split mode must be 'intra' or 'inter', got '" + std::string(name) + "'");
}

const std::vector<std::string>& ds1_records() {
  static const std::vector<std::string> ds1{"101", "106", "108", "109", "112", "114", "115", "116",
                                            "118", "119", "122", "124", "201", "203", "205", "207",
                                            "208", "209", "215", "220", "223", "230"};
  return ds1;
}

const std::vector<std::string>& ds2_records() {
  static const std::vector<std::string> ds2{"100", "103", "105", "111", "113", "117", "121", "123",
                                            "200", "202", "210", "212", "213", "214", "219", "221",
                                            "222", "228", "231", "232", "233", "234"};
  return ds2;
}

SplitPlan SplitPlan::inter_patient(std::uint64_t seed) {
  SplitPlan p;
  p.mode = SplitMode::kInter;
  p.train_records = {ds1_records().begin(), ds1_records().end()};
  p.test_records = {ds2_records().begin(), ds2_records().end()};
  p.seed = seed;
  return p;
}

SplitPlan SplitPlan::intra_patient(std::uint64_t seed) {
  SplitPlan p;
  p.mode = SplitMode::kIntra;
  p.train_records = {ds1_records().begin(), ds1_records().end()};
  p.train_records.insert(ds2_records().begin(), ds2_records().end());
  p.test_records = p.train_records;
  p.train_fraction = 0.8;
  p.seed = seed;
  return p;
}

Split build_split(std::span<const Beat> beats, const SplitPlan& plan) {
  Split split;
  if (plan.mode == SplitMode::kIntra) {
    if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
      throw std::invalid_argument("train_fraction must be in (0,1)");
    }
    std::vector<std::size_t> order(beats.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(plan.seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    const auto n_train =
        static_cast<std::size_t>(std::llround(plan.train_fraction * static_cast<double>(beats.size())));
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_train ? split.train : split.test).push_back(beats[order[i]]);
    return split;
  }

  for (const auto& id : plan.train_records) {
    if (plan.test_records.count(id)) {
      throw std::invalid_argument("record " + id + " is in both train and test sets");
    }
  }
  for (const auto& b : beats) {
    if (plan.train_records.count(b.record_id)) {
      split.train.push_back(b);
    } else if (plan.test_records.count(b.record_id)) {
      split.test.push_back(b);
    } else {
      throw DataError(DataErrorKind::kUnknownRecord,
                      "record " + b.record_id + " is in neither DS1 nor DS2");
    }
  }
  const ClassCounts train_counts = class_counts(split.train);
  for (Label l : kAllLabels) {
    if (train_counts[index_of(l)] == 0) split.excluded_classes.push_back(l);
  }
  if (!split.excluded_classes.empty()) {
    std::erase_if(split.test, [&](const Beat& b) {
      return std::find(split.excluded_classes.begin(), split.excluded_classes.end(), b.label) !=
             split.excluded_classes.end();
    });
  }
  return split;
}

// ---- SMOTE -----------------------------------------------------------------

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// k nearest members of `members` to members[self], ties broken by index.
std::vector<std::size_t> nearest(std::span<const Beat> beats, const std::vector<std::size_t>& members,
                                 std::size_t self, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(members.size() - 1);
  for (std::size_t j : members) {
    if (j == self) continue;
    d.emplace_back(squared_distance(beats[self].samples, beats[j].samples), j);
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<long>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

}  // namespace

SmoteResult smote_balance(std::span<const Beat> train, const SmoteOptions& options) {
  if (options.k_neighbors == 0) throw std::invalid_argument("smote: k_neighbors must be positive");
  SmoteResult result;
  result.beats.assign(train.begin(), train.end());

  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i = 0; i < train.size(); ++i) members[index_of(train[i].label)].push_back(i);
  std::size_t majority = 0;
  for (const auto& m : members) majority = std::max(majority, m.size());

  Rng rng(options.seed);
  for (Label label : kAllLabels) {
    const auto& cls = members[index_of(label)];
    if (cls.empty() || cls.size() == majority) continue;
    if (cls.size() < 2) {
      throw DataError(DataErrorKind::kInsufficientClass,
                      std::string("smote: class ") + to_char(label) +
                          " has a single sample; cannot interpolate");
    }
    const std::size_t k = std::min(options.k_neighbors, cls.size() - 1);
    std::vector<std::vector<std::size_t>> neighbors(cls.size());
    const std::size_t needed = majority - cls.size();
    for (std::size_t j = 0; j < needed; ++j) {
      const std::size_t slot = j % cls.size();
      const std::size_t base = cls[slot];
      if (neighbors[slot].empty()) neighbors[slot] = nearest(train, cls, base, k);
      const std::size_t nb = neighbors[slot][rng.index(k)];
      const double u = rng.uniform();

      Beat synth;
      synth.label = label;
      synth.record_id = train[base].record_id;
      synth.r_peak_index = train[base].r_peak_index;
      synth.synthetic = true;
      synth.samples.resize(train[base].samples.size());
      for (std::size_t s = 0; s < synth.samples.size(); ++s) {
        const double x = train[base].samples[s];
        synth.samples[s] = std::clamp(x + u * (train[nb].samples[s] - x), 0.0, 1.0);
      }
      result.beats.push_back(std::move(synth));
      result.origins.push_back({base, nb, u});
    }
  }
  return result;
}

}  // namespace ecgadv
