#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include "ecgadv/data.hpp"
#include "ecgadv/rng.hpp"

using namespace ecgadv;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ecgadv_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Sloped sinusoid standing in for a lead-II trace.
std::string signal_csv(std::size_t n, const std::string& header = "") {
  std::string out = header.empty() ? "" : header + "\n";
  for (std::size_t i = 0; i < n; ++i) out += std::to_string(0.001 * i + std::sin(0.05 * i)) + "\n";
  return out;
}

Beat make_beat(Label label, const std::string& record, Rng& rng) {
  Beat b;
  b.label = label;
  b.record_id = record;
  b.samples.resize(kBeatLength);
  for (double& v : b.samples) v = rng.uniform();
  return b;
}

}  // namespace

// ---- ingestion -------------------------------------------------------------

TEST(IngestTest, CanonicalPairWithThreeBeats) {
  TempDir dir;
  write_file(dir.path() / "900.sig.csv", signal_csv(1000));
  write_file(dir.path() / "900.ann.csv", "sample,symbol\n200,N\n500,V\n800,A\n");
  const RecordSource r = ingest_record(dir.path() / "900");
  EXPECT_EQ(r.record_id, "900");
  EXPECT_EQ(r.signal.size(), 1000u);
  ASSERT_EQ(r.annotations.size(), 3u);
  EXPECT_EQ(r.annotations[1].sample, 500u);
  EXPECT_EQ(r.annotations[1].symbol, "V");
  // Either file of the pair names the same record.
  EXPECT_EQ(ingest_record(dir.path() / "900.ann.csv").signal.size(), 1000u);
}

TEST(IngestTest, SelectsLeadTwoColumn) {
  TempDir dir;
  write_file(dir.path() / "901.sig.csv", "V5,MLII\n9,0.5\n9,0.25\n9,0.75\n");
  write_file(dir.path() / "901.ann.csv", "1,N\n");
  const RecordSource r = ingest_record(dir.path() / "901");
  EXPECT_EQ(r.signal, (std::vector<double>{0.5, 0.25, 0.75}));
}

TEST(IngestTest, LeadOneOnlyIsRejected) {
  TempDir dir;
  write_file(dir.path() / "902.sig.csv", signal_csv(10, "I"));
  write_file(dir.path() / "902.ann.csv", "1,N\n");
  try {
    ingest_record(dir.path() / "902");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kLeadUnavailable);
    EXPECT_NE(std::string(e.what()).find("lead II unavailable"), std::string::npos);
  }
}

TEST(IngestTest, DistinctDiagnostics) {
  TempDir dir;
  write_file(dir.path() / "903.sig.csv", signal_csv(10));
  try {
    ingest_record(dir.path() / "903");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kMissingAnnotations);
  }

  write_file(dir.path() / "904.sig.csv", "MLII,V1\n0.1,0.2\n0.3\n");
  write_file(dir.path() / "904.ann.csv", "0,N\n");
  try {
    ingest_record(dir.path() / "904");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kTruncated);
  }

  write_file(dir.path() / "905.sig.csv", signal_csv(10));
  write_file(dir.path() / "905.ann.csv", "1,N\n5\n");
  try {
    ingest_record(dir.path() / "905");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kTruncated);
  }

  write_file(dir.path() / "906.sig.csv", signal_csv(10));
  write_file(dir.path() / "906.ann.csv", "5,N\n3,N\n");
  try {
    ingest_record(dir.path() / "906");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kInvalidAnnotations);
  }

  try {
    parse_record_format("wfdb-binary");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kUnknownFormat);
  }
}

TEST(IngestTest, ListsRecordsSorted) {
  TempDir dir;
  for (const char* id : {"203", "101", "117"}) write_file(dir.path() / (std::string(id) + ".sig.csv"), "0\n");
  write_file(dir.path() / "notes.txt", "x");
  const auto records = list_records(dir.path());
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].filename(), "101");
  EXPECT_EQ(records[2].filename(), "203");
  EXPECT_THROW(list_records(dir.path() / "missing"), DataError);
}

// ---- label map and extraction ------------------------------------------------

TEST(LabelMapTest, AamiGroups) {
  const LabelMap m = LabelMap::aami();
  for (const char* s : {"N", "L", "R", "e", "j"}) EXPECT_EQ(m.map(s), Label::N) << s;
  for (const char* s : {"A", "a", "J", "S"}) EXPECT_EQ(m.map(s), Label::S) << s;
  for (const char* s : {"V", "E"}) EXPECT_EQ(m.map(s), Label::V) << s;
  EXPECT_EQ(m.map("F"), Label::F);
  for (const char* s : {"/", "f", "Q", "+", "~", "|", "x", "!", ""}) EXPECT_FALSE(m.map(s)) << s;
  EXPECT_EQ(m.entries().size(), 12u);
}

TEST(ExtractTest, WindowGeometry) {
  RecordSource r;
  r.record_id = "t";
  r.signal.resize(280);
  for (std::size_t i = 0; i < 280; ++i) r.signal[i] = static_cast<double>(i % 37);
  r.annotations = {{140, "N"}};
  ExtractionResult res = extract_beats(r, LabelMap::aami());
  ASSERT_EQ(res.beats.size(), 1u);
  // Window [0, 280): 140 samples before the peak, the peak, 139 after.
  EXPECT_EQ(res.beats[0].samples, normalize_beat(r.signal));
  EXPECT_EQ(res.beats[0].r_peak_index, 140);

  for (std::size_t peak : {100u, 139u, 141u}) {
    r.annotations = {{peak, "N"}};
    res = extract_beats(r, LabelMap::aami());
    EXPECT_TRUE(res.beats.empty()) << peak;
    EXPECT_EQ(res.stats.boundary_dropped, 1u) << peak;
  }
}

TEST(ExtractTest, SkipsUnmappedAndDegenerate) {
  RecordSource r;
  r.record_id = "t";
  r.signal.assign(2000, 1.0);
  for (std::size_t i = 1000; i < 2000; ++i) r.signal[i] = std::cos(0.1 * i);
  r.annotations = {{300, "N"}, {600, "+"}, {1300, "V"}, {1600, "Q"}};
  const ExtractionResult res = extract_beats(r, LabelMap::aami());
  ASSERT_EQ(res.beats.size(), 1u);
  EXPECT_EQ(res.beats[0].label, Label::V);
  EXPECT_EQ(res.stats.unmapped_skipped, 2u);
  EXPECT_EQ(res.stats.degenerate_dropped, 1u);
  for (double v : res.beats[0].samples) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// ---- normalization -----------------------------------------------------------

TEST(NormalizeTest, ToyWindow) {
  EXPECT_EQ(normalize_beat(std::vector<double>{0, 5, 10}), (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(NormalizeTest, IdempotentOnNormalized) {
  Rng rng(4);
  std::vector<double> w(kBeatLength);
  for (double& v : w) v = rng.uniform();
  const auto once = normalize_beat(w);
  EXPECT_EQ(normalize_beat(once), once);
}

TEST(NormalizeTest, RandomWindowsHitExactBounds) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> w(kBeatLength);
    const double scale = std::exp(rng.uniform() * 10.0 - 5.0);
    const double offset = rng.uniform() * 200.0 - 100.0;
    for (double& v : w) v = offset + scale * rng.normal();
    const auto out = normalize_beat(w);
    EXPECT_EQ(*std::min_element(out.begin(), out.end()), 0.0);
    EXPECT_EQ(*std::max_element(out.begin(), out.end()), 1.0);
  }
}

TEST(NormalizeTest, ConstantWindowRejected) {
  try {
    normalize_beat(std::vector<double>(kBeatLength, 0.3));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kDegenerateWindow);
  }
}

// ---- splits ----------------------------------------------------------------

TEST(SplitTest, DsListsAreDisjointAndCorrected) {
  const std::set<std::string> ds1(ds1_records().begin(), ds1_records().end());
  const std::set<std::string> ds2(ds2_records().begin(), ds2_records().end());
  EXPECT_EQ(ds1.size(), 22u);
  EXPECT_EQ(ds1_records().size(), 22u);  // no duplicates
  EXPECT_EQ(ds2.size(), 22u);
  for (const auto& id : ds1) EXPECT_FALSE(ds2.count(id)) << id;
  EXPECT_TRUE(ds1.count("101"));
  EXPECT_TRUE(ds1.count("106"));
}

TEST(SplitTest, InterPatientPartitionsByRecord) {
  Rng rng(6);
  std::vector<Beat> beats;
  for (const auto& id : ds1_records()) beats.push_back(make_beat(Label::N, id, rng));
  for (const auto& id : ds2_records()) beats.push_back(make_beat(Label::V, id, rng));
  beats.push_back(make_beat(Label::V, "101", rng));
  const Split s = build_split(beats, SplitPlan::inter_patient(1));
  const std::set<std::string> ds2(ds2_records().begin(), ds2_records().end());
  for (const auto& b : s.test) EXPECT_TRUE(ds2.count(b.record_id));
  for (const auto& b : s.train) EXPECT_FALSE(ds2.count(b.record_id));
  EXPECT_EQ(s.train.size(), 23u);
  EXPECT_EQ(s.test.size(), 22u);
}

TEST(SplitTest, InterPatientUnknownRecordNamed) {
  Rng rng(7);
  std::vector<Beat> beats{make_beat(Label::N, "101", rng), make_beat(Label::N, "102", rng)};
  try {
    build_split(beats, SplitPlan::inter_patient(1));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kUnknownRecord);
    EXPECT_NE(std::string(e.what()).find("102"), std::string::npos);
  }
}

TEST(SplitTest, InterPatientDropsClassesAbsentFromTraining) {
  Rng rng(8);
  std::vector<Beat> beats{make_beat(Label::N, "101", rng), make_beat(Label::S, "106", rng),
                          make_beat(Label::N, "100", rng), make_beat(Label::F, "100", rng)};
  const Split s = build_split(beats, SplitPlan::inter_patient(1));
  EXPECT_EQ(s.excluded_classes, (std::vector<Label>{Label::V, Label::F}));
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.test[0].label, Label::N);
}

TEST(SplitTest, IntraPatientEightyTwentyDeterministic) {
  Rng rng(9);
  std::vector<Beat> beats;
  for (int i = 0; i < 100; ++i) {
    beats.push_back(make_beat(static_cast<Label>(i % 4), "10" + std::to_string(i % 3), rng));
    beats.back().r_peak_index = i;
  }
  const Split a = build_split(beats, SplitPlan::intra_patient(42));
  const Split b = build_split(beats, SplitPlan::intra_patient(42));
  const Split c = build_split(beats, SplitPlan::intra_patient(43));
  EXPECT_EQ(a.train.size(), 80u);
  EXPECT_EQ(a.test.size(), 20u);
  std::set<long> seen;
  for (std::size_t i = 0; i < 80; ++i) {
    EXPECT_EQ(a.train[i].r_peak_index, b.train[i].r_peak_index);
    seen.insert(a.train[i].r_peak_index);
  }
  for (const auto& t : a.test) EXPECT_FALSE(seen.count(t.r_peak_index));
  bool differs = false;
  for (std::size_t i = 0; i < 80; ++i) differs |= a.train[i].r_peak_index != c.train[i].r_peak_index;
  EXPECT_TRUE(differs);
}

// ---- SMOTE -----------------------------------------------------------------

TEST(SmoteTest, BalancesToMajority) {
  Rng rng(10);
  std::vector<Beat> train;
  for (int i = 0; i < 100; ++i) train.push_back(make_beat(Label::N, "a", rng));
  for (Label l : {Label::S, Label::V, Label::F})
    for (int i = 0; i < 10; ++i) train.push_back(make_beat(l, "b", rng));
  const SmoteResult r = smote_balance(train, {5, 3});
  EXPECT_EQ(class_counts(r.beats), (ClassCounts{100, 100, 100, 100}));
  EXPECT_EQ(r.origins.size(), 270u);
  for (std::size_t i = 0; i < train.size(); ++i) EXPECT_FALSE(r.beats[i].synthetic);
  for (std::size_t i = train.size(); i < r.beats.size(); ++i) EXPECT_TRUE(r.beats[i].synthetic);
}

TEST(SmoteTest, SyntheticBeatsLieBetweenNearestParents) {
  Rng rng(11);
  std::vector<Beat> train;
  for (int i = 0; i < 30; ++i) train.push_back(make_beat(Label::N, "a", rng));
  for (int i = 0; i < 8; ++i) train.push_back(make_beat(Label::V, "b", rng));
  const SmoteResult r = smote_balance(train, {5, 4});
  for (std::size_t j = 0; j < r.origins.size(); ++j) {
    const auto& o = r.origins[j];
    const Beat& s = r.beats[train.size() + j];
    const Beat& x = train[o.base];
    const Beat& y = train[o.neighbor];
    EXPECT_EQ(x.label, s.label);
    EXPECT_EQ(y.label, s.label);
    EXPECT_NE(o.base, o.neighbor);
    for (std::size_t i = 0; i < kBeatLength; ++i) {
      EXPECT_GE(s.samples[i], std::min(x.samples[i], y.samples[i]) - 1e-9);
      EXPECT_LE(s.samples[i], std::max(x.samples[i], y.samples[i]) + 1e-9);
    }
    // Brute-force rank of the neighbour among same-class beats.
    auto dist = [&](const Beat& a) {
      double d = 0.0;
      for (std::size_t i = 0; i < kBeatLength; ++i) d += (a.samples[i] - x.samples[i]) * (a.samples[i] - x.samples[i]);
      return d;
    };
    const double dn = dist(y);
    int closer = 0;
    for (std::size_t k = 0; k < train.size(); ++k)
      if (k != o.base && train[k].label == s.label && dist(train[k]) < dn) ++closer;
    EXPECT_LT(closer, 5);
  }
}

TEST(SmoteTest, TwoSampleClassMatchesUnrolledOracle) {
  Rng rng(12);
  std::vector<Beat> train;
  for (int i = 0; i < 5; ++i) train.push_back(make_beat(Label::N, "a", rng));
  train.push_back(make_beat(Label::S, "b", rng));
  train.push_back(make_beat(Label::S, "c", rng));
  const std::uint64_t seed = 77;
  const SmoteResult r = smote_balance(train, {5, seed});
  ASSERT_EQ(r.beats.size(), 10u);

  // k clips to 1: each synthetic consumes one neighbour draw (always index 0)
  // then one 53-bit uniform draw.
  std::mt19937_64 engine(seed);
  const std::size_t bases[3] = {5, 6, 5};
  for (int j = 0; j < 3; ++j) {
    engine();
    const double u = static_cast<double>(engine() >> 11) / 9007199254740992.0;
    const Beat& x = train[bases[j]];
    const Beat& y = train[bases[j] == 5 ? 6 : 5];
    const Beat& s = r.beats[7 + j];
    EXPECT_EQ(s.record_id, x.record_id);
    for (std::size_t i = 0; i < kBeatLength; ++i)
      EXPECT_NEAR(s.samples[i], x.samples[i] + u * (y.samples[i] - x.samples[i]), 1e-15);
  }
}

TEST(SmoteTest, SingleSampleClassRejected) {
  Rng rng(13);
  std::vector<Beat> train{make_beat(Label::N, "a", rng), make_beat(Label::N, "a", rng),
                          make_beat(Label::F, "b", rng)};
  try {
    smote_balance(train, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.kind(), DataErrorKind::kInsufficientClass);
  }
}

TEST(ClassCountsTest, EmptyIsZero) {
  EXPECT_EQ(class_counts(std::vector<Beat>{}), (ClassCounts{0, 0, 0, 0}));
}

// ---- beats file --------------------------------------------------------------

TEST(BeatsFileTest, RoundTripIsExact) {
  TempDir dir;
  Rng rng(14);
  std::vector<Beat> beats;
  for (Label l : kAllLabels) beats.push_back(make_beat(l, "2" + std::to_string(index_of(l)), rng));
  beats[0].samples[0] = 0.0;
  beats[0].samples[1] = 1.0;
  write_beats_csv(dir.path() / "b.csv", beats);
  const auto back = read_beats_csv(dir.path() / "b.csv");
  ASSERT_EQ(back.size(), beats.size());
  for (std::size_t i = 0; i < beats.size(); ++i) {
    EXPECT_EQ(back[i].samples, beats[i].samples);
    EXPECT_EQ(back[i].label, beats[i].label);
    EXPECT_EQ(back[i].record_id, beats[i].record_id);
  }
  EXPECT_EQ(format_beats_csv(back), format_beats_csv(beats));
}

TEST(BeatsFileTest, RejectsMalformedRows) {
  TempDir dir;
  write_file(dir.path() / "nohdr.csv", "100,N,0.5\n");
  EXPECT_THROW(read_beats_csv(dir.path() / "nohdr.csv"), DataError);
  std::string row = "record_id,label\n100,Q";
  for (std::size_t i = 0; i < kBeatLength; ++i) row += ",0.5";
  write_file(dir.path() / "badlabel.csv", row + "\n");
  EXPECT_THROW(read_beats_csv(dir.path() / "badlabel.csv"), DataError);
  write_file(dir.path() / "short.csv", "record_id,label\n100,N,0.1,0.2\n");
  EXPECT_THROW(read_beats_csv(dir.path() / "short.csv"), DataError);
}

// ---- real MIT-BIH data (optional) --------------------------------------------
//
// Set ECGADV_MITDB_CSV to a directory of records converted with
// tools/mitdb_to_csv.py to run these checks.

TEST(MitBihTest, Record100AnnotationAndBeatCounts) {
  const char* dir = std::getenv("ECGADV_MITDB_CSV");
  if (!dir) GTEST_SKIP() << "ECGADV_MITDB_CSV not set";
  const fs::path base = fs::path(dir) / "100";

  // Independent reader: count annotation rows whose symbol is a beat symbol
  // and, separately, mapped beats whose window fits the record.
  std::ifstream sig(fs::path(dir) / "100.sig.csv");
  std::size_t n_samples = 0;
  for (std::string line; std::getline(sig, line);)
    if (!line.empty() && (std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-')) ++n_samples;
  const std::set<std::string> beat_symbols{"N", "L", "R", "B", "A", "a", "J", "S", "V", "r",
                                           "F", "e", "j", "n", "E", "/", "f", "Q", "?"};
  std::ifstream ann(fs::path(dir) / "100.ann.csv");
  std::size_t n_beats = 0;
  ClassCounts expected{};
  const LabelMap map = LabelMap::aami();
  for (std::string line; std::getline(ann, line);) {
    const auto comma = line.find(',');
    if (comma == std::string::npos || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    const long idx = std::stol(line.substr(0, comma));
    const std::string sym = line.substr(comma + 1);
    if (beat_symbols.count(sym)) ++n_beats;
    if (auto l = map.map(sym); l && idx >= 140 && idx + 139 < static_cast<long>(n_samples))
      ++expected[index_of(*l)];
  }
  EXPECT_EQ(n_beats, 2273u);

  const RecordSource r = ingest_record(base);
  const ExtractionResult res = extract_beats(r, map);
  EXPECT_EQ(class_counts(res.beats), expected);
}
