#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "ecgadv/data.hpp"

namespace ecgadv {
namespace fs = std::filesystem;
namespace {

constexpr std::string_view kSignalSuffix = ".sig.csv";
constexpr std::string_view kAnnotationSuffix = ".ann.csv";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_lead_two(std::string_view name) {
  const std::string n = lower(name);
  return n == "mlii" || n == "ii" || n == "lead_ii" || n == "lead ii" || n == "lead2";
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Splits a path given as stem, .sig.csv or .ann.csv into (dir, id).
std::pair<fs::path, std::string> record_stem(const fs::path& path) {
  std::string name = path.filename().string();
  for (auto suffix : {kSignalSuffix, kAnnotationSuffix}) {
    if (ends_with(name, suffix)) {
      name.resize(name.size() - suffix.size());
      break;
    }
  }
  return {path.parent_path(), name};
}

std::vector<double> read_signal(const fs::path& file, const std::string& id) {
  std::ifstream in(file);
  if (!in) throw DataError(DataErrorKind::kMissingFile, "record " + id + ": cannot open " + file.string());

  std::vector<double> signal;
  std::string line;
  std::size_t column = 0;
  std::size_t columns = 1;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    if (first) {
      first = false;
      if (!parse_double(fields[0])) {
        // Header row naming the leads.
        const auto it = std::find_if(fields.begin(), fields.end(), is_lead_two);
        if (it == fields.end()) {
          throw DataError(DataErrorKind::kLeadUnavailable,
                          "record " + id + ": lead II unavailable (leads: " + std::string(view) + ")");
        }
        column = static_cast<std::size_t>(it - fields.begin());
        columns = fields.size();
        continue;
      }
      columns = fields.size();
    }
    if (fields.size() != columns) {
      throw DataError(DataErrorKind::kTruncated, "record " + id + ": " + file.filename().string() +
                                                     " line " + std::to_string(line_no) +
                                                     " has " + std::to_string(fields.size()) +
                                                     " fields, expected " + std::to_string(columns));
    }
    const auto v = parse_double(fields[column]);
    if (!v) {
      throw DataError(DataErrorKind::kTruncated, "record " + id + ": unparsable sample on line " +
                                                     std::to_string(line_no));
    }
    signal.push_back(*v);
  }
  if (signal.empty()) throw DataError(DataErrorKind::kTruncated, "record " + id + ": empty signal");
  return signal;
}

std::vector<Annotation> read_annotations(const fs::path& file, const std::string& id,
                                         std::size_t signal_length) {
  std::ifstream in(file);
  if (!in) {
    throw DataError(DataErrorKind::kMissingAnnotations,
                    "record " + id + ": annotation file " + file.string() + " not found");
  }
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view);
    const auto index = parse_index(fields[0]);
    if (!index) {
      if (line_no == 1) continue;  // header
      throw DataError(DataErrorKind::kTruncated, "record " + id + ": bad annotation index on line " +
                                                     std::to_string(line_no));
    }
    if (fields.size() < 2 || fields[1].empty()) {
      throw DataError(DataErrorKind::kTruncated, "record " + id + ": annotation line " +
                                                     std::to_string(line_no) + " has no symbol");
    }
    if (*index >= signal_length) {
      throw DataError(DataErrorKind::kInvalidAnnotations,
                      "record " + id + ": annotation at " + std::to_string(*index) +
                          " beyond signal length " + std::to_string(signal_length));
    }
    if (!out.empty() && *index <= out.back().sample) {
      throw DataError(DataErrorKind::kInvalidAnnotations,
                      "record " + id + ": annotation indices not strictly increasing at line " +
                          std::to_string(line_no));
    }
    out.push_back({*index, std::string(fields[1])});
  }
  return out;
}

}  // namespace

const char* to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::kUnknownFormat: return "unknown_format";
    case DataErrorKind::kMissingFile: return "missing_file";
    case DataErrorKind::kMissingAnnotations: return "missing_annotations";
    case DataErrorKind::kLeadUnavailable: return "lead_unavailable";
    case DataErrorKind::kTruncated: return "truncated";
    case DataErrorKind::kInvalidAnnotations: return "invalid_annotations";
    case DataErrorKind::kDegenerateWindow: return "degenerate_window";
    case DataErrorKind::kUnknownRecord: return "unknown_record";
    case DataErrorKind::kInsufficientClass: return "insufficient_class";
    case DataErrorKind::kMalformedBeats: return "malformed_beats";
  }
  return "unknown";
}

RecordFormat parse_record_format(std::string_view name) {
  if (name == "csv-pair" || name == "paired-csv") return RecordFormat::kPairedCsv;
  throw DataError(DataErrorKind::kUnknownFormat, "unknown record format '" + std::string(name) + "'");
}

RecordSource ingest_record(const fs::path& path, RecordFormat format) {
  if (format != RecordFormat::kPairedCsv) {
    throw DataError(DataErrorKind::kUnknownFormat, "unsupported record format");
  }
  const auto [dir, id] = record_stem(path);
  const fs::path sig = dir / (id + std::string(kSignalSuffix));
  const fs::path ann = dir / (id + std::string(kAnnotationSuffix));
  if (!fs::exists(sig)) {
    throw DataError(DataErrorKind::kMissingFile, "record " + id + ": " + sig.string() + " not found");
  }
  RecordSource record;
  record.record_id = id;
  record.signal = read_signal(sig, id);
  record.annotations = read_annotations(ann, id, record.signal.size());
  return record;
}

std::vector<fs::path> list_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError(DataErrorKind::kMissingFile, "record directory " + dir.string() + " not found");
  }
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && ends_with(name, kSignalSuffix)) {
      out.push_back(dir / name.substr(0, name.size() - kSignalSuffix.size()));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- canonical beats file ------------------------------------------------------

std::string format_beats_csv(std::span<const Beat> beats) {
  std::string out = "record_id,label";
  for (std::size_t i = 0; i < kBeatLength; ++i) out += ",s" + std::to_string(i);
  out += '\n';
  char buf[64];
  for (const auto& b : beats) {
    if (b.samples.size() != kBeatLength) {
      throw DataError(DataErrorKind::kMalformedBeats,
                      "beat from record " + b.record_id + " has " + std::to_string(b.samples.size()) +
                          " samples");
    }
    if (b.record_id.find_first_of(",\n") != std::string::npos) {
      throw DataError(DataErrorKind::kMalformedBeats, "record id '" + b.record_id + "' contains a separator");
    }
    out += b.record_id;
    out += ',';
    out += to_char(b.label);
    for (double v : b.samples) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

void write_beats_csv(const fs::path& path, std::span<const Beat> beats) {
  const std::string text = format_beats_csv(beats);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::kMissingFile, "cannot write " + path.string());
  out << text;
}

std::vector<Beat> read_beats_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::kMissingFile, "cannot open beats file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("record_id,label", 0) != 0) {
    throw DataError(DataErrorKind::kMalformedBeats, path.string() + ": missing beats header");
  }
  std::vector<Beat> beats;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = path.filename().string() + " line " + std::to_string(line_no);
    if (fields.size() != kBeatLength + 2) {
      throw DataError(DataErrorKind::kMalformedBeats, where + ": expected " +
                                                          std::to_string(kBeatLength + 2) +
                                                          " fields, got " + std::to_string(fields.size()));
    }
    Beat b;
    b.record_id = std::string(fields[0]);
    const auto label = parse_label(fields[1]);
    if (!label) throw DataError(DataErrorKind::kMalformedBeats, where + ": bad label '" + std::string(fields[1]) + "'");
    b.label = *label;
    b.samples.reserve(kBeatLength);
    for (std::size_t i = 0; i < kBeatLength; ++i) {
      const auto v = parse_double(fields[i + 2]);
      if (!v || !(*v >= 0.0 && *v <= 1.0)) {
        throw DataError(DataErrorKind::kMalformedBeats, where + ": sample " + std::to_string(i) +
                                                            " is not a number in [0,1]");
      }
      b.samples.push_back(*v);
    }
    beats.push_back(std::move(b));
  }
  return beats;
}

}  // namespace ecgadv
