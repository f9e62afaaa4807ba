#pragma once

// ECG record ingestion and beat preparation: R-peak windows, AAMI label
// mapping, per-beat normalization, intra/inter-patient splits and SMOTE.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ecgadv/beat.hpp"

namespace ecgadv {

enum class DataErrorKind {
  kUnknownFormat,
  kMissingFile,
  kMissingAnnotations,
  kLeadUnavailable,
  kTruncated,
  kInvalidAnnotations,
  kDegenerateWindow,
  kUnknownRecord,
  kInsufficientClass,
  kMalformedBeats,
};

const char* to_string(DataErrorKind kind);

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

struct Annotation {
  std::size_t sample = 0;
  std::string symbol;
};

/// One lead-II recording and its beat annotations.
struct RecordSource {
  std::string record_id;
  std::vector<double> signal;
  std::vector<Annotation> annotations;
};

/// Paired CSV layout: <id>.sig.csv holds one sample per line (an optional
/// header names the leads; the MLII / II column is selected) and <id>.ann.csv
/// holds "sample_index,symbol" lines.
enum class RecordFormat { kPairedCsv };

RecordFormat parse_record_format(std::string_view name);

/// `path` is the record stem (dir/100) or either file of the pair.
RecordSource ingest_record(const std::filesystem::path& path,
                           RecordFormat format = RecordFormat::kPairedCsv);

/// Record stems (sorted by id) that have a .sig.csv file in `dir`.
std::vector<std::filesystem::path> list_records(const std::filesystem::path& dir);

/// MIT-BIH beat symbol -> AAMI group.
class LabelMap {
 public:
  /// N <- {N, L, R, e, j}; S <- {A, a, J, S}; V <- {V, E}; F <- {F}.
  static LabelMap aami();

  std::optional<Label> map(std::string_view symbol) const;
  const std::map<std::string, Label>& entries() const { return entries_; }

 private:
  std::map<std::string, Label> entries_;
};

inline constexpr std::size_t kSamplesBeforePeak = 140;
inline constexpr std::size_t kSamplesAfterPeak = 139;

struct ExtractionStats {
  std::size_t boundary_dropped = 0;
  std::size_t degenerate_dropped = 0;
  std::size_t unmapped_skipped = 0;

  ExtractionStats& operator+=(const ExtractionStats& o);
};

struct ExtractionResult {
  std::vector<Beat> beats;
  ExtractionStats stats;
};

/// Cuts [peak - 140, peak + 140) around each mapped annotation.
ExtractionResult extract_beats(const RecordSource& record, const LabelMap& map);

/// (x - min) / (max - min). Throws DataError(kDegenerateWindow) for a
/// constant window.
std::vector<double> normalize_beat(std::span<const double> window);

// ---- splits ----------------------------------------------------------------

enum class SplitMode { kIntra, kInter };

const char* to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view name);

/// DS1 with the duplicated "101" collapsed (22 distinct records).
const std::vector<std::string>& ds1_records();
const std::vector<std::string>& ds2_records();

struct SplitPlan {
  SplitMode mode = SplitMode::kIntra;
  std::set<std::string> train_records;
  std::set<std::string> test_records;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  static SplitPlan inter_patient(std::uint64_t seed);
  static SplitPlan intra_patient(std::uint64_t seed);
};

struct Split {
  std::vector<Beat> train;
  std::vector<Beat> test;
  /// Classes removed from the split because training has no examples of
  /// them (inter-patient mode only).
  std::vector<Label> excluded_classes;
};

/// Intra: pool, seeded shuffle, first round(train_fraction * n) to train.
/// Inter: partition by record membership; a record in neither set throws
/// DataError(kUnknownRecord).
Split build_split(std::span<const Beat> beats, const SplitPlan& plan);

// ---- SMOTE -----------------------------------------------------------------

struct SmoteOptions {
  std::size_t k_neighbors = 5;
  std::uint64_t seed = 0;
};

/// Parents of one synthetic beat: indices into the input list and the
/// interpolation weight.
struct SmoteOrigin {
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double weight = 0.0;
};

struct SmoteResult {
  /// Input beats (in order) followed by the synthetic beats.
  std::vector<Beat> beats;
  /// One entry per synthetic beat, aligned with beats[input.size() + i].
  std::vector<SmoteOrigin> origins;
};

/// Upsamples every present class to the majority count with
/// x + u * (neighbor - x), neighbor drawn from the k nearest same-class
/// beats (Euclidean), u ~ U[0, 1). Bases cycle through the class in order.
SmoteResult smote_balance(std::span<const Beat> train, const SmoteOptions& options);

// ---- canonical beats file ----------------------------------------------------

/// Header "record_id,label,s0,...,s279" then one row per beat; numbers are
/// written in shortest round-trip form.
void write_beats_csv(const std::filesystem::path& path, std::span<const Beat> beats);
std::string format_beats_csv(std::span<const Beat> beats);
std::vector<Beat> read_beats_csv(const std::filesystem::path& path);

}  // namespace ecgadv
