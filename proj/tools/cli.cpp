#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "ecgadv/checkpoint.hpp"
#include "ecgadv/data.hpp"
#include "ecgadv/metrics.hpp"
#include "ecgadv/training.hpp"
#include "json.hpp"
#include "plot.hpp"

namespace ecgadv::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string checkpoint_slug(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::kIo: return "io";
    case CheckpointErrorKind::kCorrupt: return "corrupt";
    case CheckpointErrorKind::kUnsupportedVersion: return "unsupported_version";
    case CheckpointErrorKind::kKindMismatch: return "kind_mismatch";
    case CheckpointErrorKind::kShapeMismatch: return "shape_mismatch";
  }
  return "unknown";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void require_file(const fs::path& p, const std::string& flag) {
  if (p.empty()) throw UsageError(flag + " is required");
  if (!fs::exists(p)) throw UsageError(flag + ": no such file or directory: " + p.string());
}

void require_out(const fs::path& p) {
  if (p.empty()) throw UsageError("--out is required");
  fs::create_directories(p);
}

// sha1 over the sorted "<relative path> <blob hash>" lines of every file.
std::string tree_hash(const fs::path& dir) {
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) lines.push_back(fs::relative(e.path(), dir).generic_string() + " " + git_blob_hash(e.path()));
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return sha1_hex(all);
}

// One manifest per run. Timestamps only when the run is not deterministic.
struct Manifest {
  json j;
  bool timed = false;

  Manifest(const std::string& command, bool timing) : timed(timing) {
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["inputs"] = json::object();
    j["outputs"] = json::array();
    if (timed) j["started_at"] = iso_now();
  }
  void input(const std::string& name, const fs::path& p) {
    json e{{"path", p.string()}};
    if (fs::is_regular_file(p)) e["git_blob_hash"] = git_blob_hash(p);
    if (fs::is_directory(p)) e["tree_hash"] = tree_hash(p);
    j["inputs"][name] = e;
  }
  void output(const std::string& relative) { j["outputs"].push_back(relative); }
  void write(const fs::path& out_dir) {
    if (timed) j["finished_at"] = iso_now();
    write_text(out_dir / "manifest.json", j.dump(2) + "\n");
  }
};

// ---- config file ---------------------------------------------------------------------

/// Applies `key = value` lines to options the command line left unset.
void apply_config(CLI::App& sub, const std::string& config_path) {
  if (config_path.empty()) return;
  if (!fs::is_regular_file(config_path)) throw UsageError("--config: no such file: " + config_path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(config_path);
  } catch (const CLI::Error& e) {
    throw UsageError("--config: " + std::string(e.what()));
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("--config: unknown key '" + item.name + "' for " + sub.get_name());
    }
    if (name == "config") throw UsageError("--config: nested config files are not supported");
    if (opt->count() > 0) continue;  // command line wins
    for (const auto& v : item.inputs) opt->add_result(v);
    opt->run_callback();
  }
}

// ---- prepare ------------------------------------------------------------------------------

struct PrepareArgs {
  fs::path raw, out;
  std::string mode = "intra";
  std::uint64_t seed = 0;
  bool smote = true;
  double train_fraction = 0.8;
  std::size_t k_neighbors = 5;
  bool timing = false;
};

json counts_json(std::span<const Beat> beats) {
  const ClassCounts c = class_counts(beats);
  json j;
  for (Label l : kAllLabels) j[std::string(1, to_char(l))] = c[index_of(l)];
  return j;
}

int cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  if (a.raw.empty()) throw UsageError("--raw is required");
  if (!fs::exists(a.raw)) throw UsageError("--raw: no such file or directory: " + a.raw.string());
  require_out(a.out);
  Manifest m("prepare", a.timing);
  m.input("raw", a.raw);

  std::vector<Beat> beats;
  ExtractionStats stats;
  if (fs::is_directory(a.raw)) {
    const auto records = list_records(a.raw);
    if (records.empty()) throw DataError(DataErrorKind::kMissingFile, "no *.sig.csv records in " + a.raw.string());
    const LabelMap map = LabelMap::aami();
    for (const auto& r : records) {
      const RecordSource src = ingest_record(r);
      ExtractionResult res = extract_beats(src, map);
      stats += res.stats;
      beats.insert(beats.end(), std::make_move_iterator(res.beats.begin()), std::make_move_iterator(res.beats.end()));
    }
  } else {
    beats = read_beats_csv(a.raw);
  }

  const SplitMode mode = parse_split_mode(a.mode);
  SplitPlan plan = mode == SplitMode::kInter ? SplitPlan::inter_patient(a.seed) : SplitPlan::intra_patient(a.seed);
  plan.train_fraction = a.train_fraction;
  Split split = build_split(beats, plan);

  json smote_j = nullptr;
  std::vector<Beat> train = std::move(split.train);
  const json train_counts_before = counts_json(train);
  if (a.smote) {
    SmoteResult balanced = smote_balance(train, SmoteOptions{a.k_neighbors, a.seed});
    smote_j = {{"k_neighbors", a.k_neighbors}, {"synthetic", balanced.origins.size()}};
    train = std::move(balanced.beats);
  }

  write_beats_csv(a.out / "train_beats.csv", train);
  write_beats_csv(a.out / "test_beats.csv", split.test);
  m.output("train_beats.csv");
  m.output("test_beats.csv");

  std::set<std::string> train_records, test_records;
  for (const Beat& b : train) train_records.insert(b.record_id);
  for (const Beat& b : split.test) test_records.insert(b.record_id);
  std::vector<std::string> excluded;
  for (Label l : split.excluded_classes) excluded.emplace_back(1, to_char(l));

  m.j["config"] = {{"mode", to_string(mode)},
                   {"seed", a.seed},
                   {"smote", a.smote},
                   {"train_fraction", a.train_fraction},
                   {"k_neighbors", a.k_neighbors}};
  m.j["seeds"] = {{"split", a.seed}, {"smote", a.seed}};
  const json& raw = m.j["inputs"]["raw"];
  m.j["dataset_hash"] = raw.contains("git_blob_hash") ? raw["git_blob_hash"] : raw["tree_hash"];
  m.j["extraction"] = {{"beats", beats.size()},
                       {"boundary_dropped", stats.boundary_dropped},
                       {"degenerate_dropped", stats.degenerate_dropped},
                       {"unmapped_skipped", stats.unmapped_skipped}};
  m.j["counts"] = {{"train_before_smote", train_counts_before},
                   {"train", counts_json(train)},
                   {"test", counts_json(split.test)}};
  m.j["smote"] = smote_j;
  m.j["excluded_classes"] = excluded;
  m.j["train_records"] = train_records;
  m.j["test_records"] = test_records;
  m.j["train_contains_synthetic"] = a.smote;
  m.write(a.out);
  out << "prepared " << train.size() << " train / " << split.test.size() << " test beats in " << a.out.string()
      << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------------------

struct TrainArgs {
  fs::path train, out;
  TrainingConfig config;
  std::string noise_mode = "fresh";
  bool resume = false;
  bool timing = false;
};

int cmd_train(TrainArgs a, std::ostream& out) {
  require_file(a.train, "--train");
  require_out(a.out);
  a.config.noise_mode = parse_noise_mode(a.noise_mode);
  a.config.deterministic = !a.timing;
  a.config.validate();
  const std::vector<Beat> beats = read_beats_csv(a.train);

  Manifest m("train", a.timing);
  m.input("train", a.train);
  m.j["config"] = a.config.to_json();
  m.j["config_hash"] = config_hash(a.config);
  m.j["seeds"] = {{"root", a.config.seed}};
  m.j["dataset_hash"] = m.j["inputs"]["train"]["git_blob_hash"];
  m.j["resume"] = a.resume;

  const TrainRunResult r = train_to_directory(beats, a.config, a.out, a.resume);
  m.j["resumed_from_step"] = r.resumed_from_step;
  m.j["final_step"] = r.final_step;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(a.out)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), a.out).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.output(f);
  m.write(a.out);
  out << "trained to step " << r.final_step << " in " << a.out.string() << "\n";
  return 0;
}

// ---- generate / evaluate -----------------------------------------------------------------

double checkpoint_noise_sigma(const CheckpointMeta& meta, double fallback) {
  if (meta.extra.contains("config")) return meta.extra["config"].value("noise_sigma", fallback);
  return fallback;
}

struct GenerateArgs {
  fs::path generator, beats, out;
  std::uint64_t seed = 0;
  std::optional<double> noise_sigma;
  bool timing = false;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  require_file(a.generator, "--generator");
  require_file(a.beats, "--beats");
  require_out(a.out);
  auto g = load_generator(a.generator);
  const double sigma = a.noise_sigma.value_or(checkpoint_noise_sigma(g.meta, kNoiseSigma));
  const std::vector<Beat> beats = read_beats_csv(a.beats);
  GeneratorSynthesizer synth(g.model, sigma);
  const std::vector<Beat> generated = synth.synthesize(beats, a.seed);
  write_beats_csv(a.out / "adversarial_beats.csv", generated);

  Manifest m("generate", a.timing);
  m.input("generator", a.generator);
  m.input("beats", a.beats);
  m.j["config"] = {{"seed", a.seed}, {"noise_sigma", sigma}};
  m.j["seeds"] = {{"noise", a.seed}};
  m.j["dataset_hash"] = m.j["inputs"]["beats"]["git_blob_hash"];
  m.j["synthetic"] = true;
  m.j["rows"] = generated.size();
  m.output("adversarial_beats.csv");
  m.write(a.out);
  out << "generated " << generated.size() << " beats in " << a.out.string() << "\n";
  return 0;
}

struct EvaluateArgs {
  fs::path generator, discriminator, test, out;
  std::uint64_t seed = 0;
  std::optional<double> noise_sigma;
  bool timing = false;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_file(a.generator, "--generator");
  require_file(a.discriminator, "--discriminator");
  require_file(a.test, "--test");
  require_out(a.out);
  auto g = load_generator(a.generator);
  auto d = load_discriminator(a.discriminator);
  const double sigma = a.noise_sigma.value_or(checkpoint_noise_sigma(g.meta, kNoiseSigma));
  const std::vector<Beat> test = read_beats_csv(a.test);

  GeneratorSynthesizer synth(g.model, sigma);
  DiscriminatorJudge judge(d.model);
  const std::vector<Beat> generated = synth.synthesize(test, a.seed);
  const SimilarityReport sim = similarity_report(test, generated);
  const DiscriminatorEvaluation ev = evaluate_discriminator(judge, test, generated);

  write_text(a.out / "similarity.json", sim.to_json().dump(2) + "\n");
  write_text(a.out / "similarity.csv", sim.to_csv());
  write_text(a.out / "classification_real.csv", ev.real.to_csv());
  write_text(a.out / "classification_adv.csv", ev.adversarial.to_csv());
  write_text(a.out / "detection.csv", detection_csv(ev.detection));
  const json report{{"similarity", sim.to_json()},
                    {"classification_real", ev.real.to_json()},
                    {"classification_adv", ev.adversarial.to_json()},
                    {"detection", ev.detection.to_json()}};
  write_text(a.out / "report.json", report.dump(2) + "\n");

  Manifest m("evaluate", a.timing);
  m.input("generator", a.generator);
  m.input("discriminator", a.discriminator);
  m.input("test", a.test);
  m.j["config"] = {{"seed", a.seed}, {"noise_sigma", sigma}};
  m.j["seeds"] = {{"noise", a.seed}};
  m.j["dataset_hash"] = m.j["inputs"]["test"]["git_blob_hash"];
  m.j["n_test"] = test.size();
  m.j["n_detection"] = ev.detection.total;
  for (const char* f : {"classification_adv.csv", "classification_real.csv", "detection.csv", "report.json",
                        "similarity.csv", "similarity.json"})
    m.output(f);
  m.write(a.out);
  out << "evaluated " << test.size() << " beats: ssim " << sim.overall.ssim << ", accuracy " << ev.real.accuracy
      << ", detection auc " << ev.detection.auc.value_or(0.0) << "\n";
  return 0;
}

// ---- plot ---------------------------------------------------------------------------------------

struct PlotArgs {
  std::vector<fs::path> inputs;
  fs::path generated, out;
  std::size_t per_class = 1;
  bool timing = false;
};

std::vector<double> parse_row_samples(const std::string& line, std::size_t skip, const fs::path& file) {
  std::vector<double> v;
  std::stringstream ss(line);
  std::string cell;
  for (std::size_t i = 0; std::getline(ss, cell, ','); ++i) {
    if (i < skip) continue;
    try {
      v.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw DataError(DataErrorKind::kMalformedBeats, file.string() + ": bad sample '" + cell + "'");
    }
  }
  return v;
}

Panel snapshot_panel(const fs::path& file) {
  std::ifstream f(file);
  std::string header, line;
  std::getline(f, header);
  Panel p;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string epoch, label, kind;
    std::getline(ss, epoch, ',');
    std::getline(ss, label, ',');
    std::getline(ss, kind, ',');
    p.title = "Class " + label + ", epoch " + epoch;
    p.traces.push_back({kind, parse_row_samples(line, 3, file)});
  }
  if (p.traces.empty()) throw DataError(DataErrorKind::kMalformedBeats, file.string() + ": empty snapshot");
  return p;
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  if (a.inputs.empty()) throw UsageError("--input is required");
  for (const auto& p : a.inputs) require_file(p, "--input");
  require_out(a.out);
  Manifest m("plot", a.timing);

  std::vector<std::pair<std::string, Panel>> panels;  // file name, panel
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    const fs::path& in = a.inputs[i];
    m.input("input" + std::to_string(i), in);
    std::ifstream f(in);
    std::string header;
    std::getline(f, header);
    if (header.rfind("epoch,label,kind", 0) == 0) {
      panels.emplace_back(in.stem().string() + ".svg", snapshot_panel(in));
      continue;
    }
    const std::vector<Beat> beats = read_beats_csv(in);
    std::vector<Beat> generated;
    if (!a.generated.empty()) {
      require_file(a.generated, "--generated");
      m.input("generated", a.generated);
      generated = read_beats_csv(a.generated);
      if (generated.size() != beats.size()) {
        throw UsageError("--generated has " + std::to_string(generated.size()) + " rows, --input has " +
                         std::to_string(beats.size()));
      }
    }
    for (Label l : kAllLabels) {
      Panel p;
      p.title = "Class " + std::string(1, to_char(l));
      std::size_t taken = 0;
      for (std::size_t b = 0; b < beats.size() && taken < a.per_class; ++b) {
        if (beats[b].label != l) continue;
        ++taken;
        const std::string suffix = a.per_class > 1 ? " " + std::to_string(taken) : "";
        p.traces.push_back({"real" + suffix, beats[b].samples});
        if (!generated.empty()) p.traces.push_back({"generated" + suffix, generated[b].samples});
      }
      if (!p.traces.empty()) panels.emplace_back(in.stem().string() + "_" + to_char(l) + ".svg", std::move(p));
    }
  }
  if (panels.empty()) throw DataError(DataErrorKind::kMalformedBeats, "no beats to plot");
  for (const auto& [name, panel] : panels) {
    write_text(a.out / name, render_panel_svg(panel));
    m.output(name);
  }
  m.j["config"] = {{"per_class", a.per_class}};
  m.j["seeds"] = json::object();
  m.j["dataset_hash"] = m.j["inputs"]["input0"].value("git_blob_hash", "");
  m.write(a.out);
  out << "wrote " << panels.size() << " panels to " << a.out.string() << "\n";
  return 0;
}

}  // namespace

std::string error_class(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (const auto* d = dynamic_cast<const DataError*>(&e)) return std::string("data_error.") + to_string(d->kind());
  if (const auto* c = dynamic_cast<const CheckpointError*>(&e)) return "checkpoint_error." + checkpoint_slug(c->kind());
  if (dynamic_cast<const TrainingError*>(&e)) return "training_error";
  if (dynamic_cast<const MetricError*>(&e)) return "metric_error";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape_error";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io_error";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  return "runtime_error";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional ECG GAN: data preparation, training, generation, evaluation, plots", "ecgadv"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config_path;
  auto add_common = [&](CLI::App* sub, bool& timing) {
    sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
    sub->add_flag("--timing,!--no-timing", timing, "Record wall-clock times (output no longer reproducible)");
  };

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Extract, split and balance beats");
  prepare->add_option("--raw", pa.raw, "Directory of <id>.sig.csv/<id>.ann.csv records, or a beats CSV");
  prepare->add_option("--out", pa.out, "Output directory");
  prepare->add_option("--mode", pa.mode, "intra | inter")->check(CLI::IsMember({"intra", "inter"}));
  prepare->add_option("--seed", pa.seed);
  prepare->add_flag("--smote,!--no-smote", pa.smote, "Balance training classes with SMOTE");
  prepare->add_option("--train-fraction", pa.train_fraction, "Intra-patient train share");
  prepare->add_option("--k-neighbors", pa.k_neighbors, "SMOTE neighbourhood size");
  add_common(prepare, pa.timing);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train generator and discriminator");
  train->add_option("--train", ta.train, "Training beats CSV");
  train->add_option("--out", ta.out, "Run directory");
  train->add_option("--epochs", ta.config.epochs);
  train->add_option("--batch-size", ta.config.batch_size);
  train->add_option("--lambda-rec", ta.config.lambda_rec);
  train->add_option("--lambda-class", ta.config.lambda_class);
  train->add_option("--lr", ta.config.adam.alpha);
  train->add_option("--beta1", ta.config.adam.beta1);
  train->add_option("--beta2", ta.config.adam.beta2);
  train->add_option("--adam-epsilon", ta.config.adam.epsilon);
  train->add_option("--seed", ta.config.seed);
  train->add_option("--noise-sigma", ta.config.noise_sigma);
  train->add_option("--noise-mode", ta.noise_mode, "fresh | fixed")->check(CLI::IsMember({"fresh", "fixed"}));
  train->add_option("--precision", ta.config.precision);
  train->add_option("--width-scale", ta.config.width_scale);
  train->add_flag("--d-label-input", ta.config.d_label_input, "Feed the label to the discriminator");
  train->add_option("--snapshot-every", ta.config.snapshot_every);
  train->add_option("--checkpoint-every", ta.config.checkpoint_every);
  train->add_flag("--resume", ta.resume, "Continue from the newest checkpoint in --out");
  add_common(train, ta.timing);

  GenerateArgs ga;
  double ga_sigma = 0.0;
  auto* generate = app.add_subcommand("generate", "Synthesize one adversarial beat per input beat");
  generate->add_option("--generator", ga.generator, "Generator checkpoint");
  generate->add_option("--beats", ga.beats, "Source beats CSV");
  generate->add_option("--out", ga.out, "Output directory");
  generate->add_option("--seed", ga.seed);
  auto* ga_sigma_opt = generate->add_option("--noise-sigma", ga_sigma, "Default: from the checkpoint");
  add_common(generate, ga.timing);

  EvaluateArgs ea;
  double ea_sigma = 0.0;
  auto* evaluate = app.add_subcommand("evaluate", "Similarity, classification and detection reports");
  evaluate->add_option("--generator", ea.generator, "Generator checkpoint");
  evaluate->add_option("--discriminator", ea.discriminator, "Discriminator checkpoint");
  evaluate->add_option("--test", ea.test, "Test beats CSV");
  evaluate->add_option("--out", ea.out, "Report directory");
  evaluate->add_option("--seed", ea.seed);
  auto* ea_sigma_opt = evaluate->add_option("--noise-sigma", ea_sigma, "Default: from the checkpoint");
  add_common(evaluate, ea.timing);

  PlotArgs pl;
  auto* plot = app.add_subcommand("plot", "Per-class SVG panels of beats or snapshots");
  plot->add_option("--input", pl.inputs, "Beats CSV or snapshot CSV files");
  plot->add_option("--generated", pl.generated, "Generated beats aligned with a beats --input");
  plot->add_option("--out", pl.out, "Output directory");
  plot->add_option("--per-class", pl.per_class, "Beats per class panel")->check(CLI::PositiveNumber);
  add_common(plot, pl.timing);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    CLI::App* sub = app.get_subcommands().front();
    apply_config(*sub, config_path);
    if (ga_sigma_opt->count()) ga.noise_sigma = ga_sigma;
    if (ea_sigma_opt->count()) ea.noise_sigma = ea_sigma;
    if (sub == prepare) return cmd_prepare(pa, out);
    if (sub == train) return cmd_train(ta, out);
    if (sub == generate) return cmd_generate(ga, out);
    if (sub == evaluate) return cmd_evaluate(ea, out);
    return cmd_plot(pl, out);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << error_class(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace ecgadv::cli
