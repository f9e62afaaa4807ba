#include "ecgadv/training.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "ecgadv/checkpoint.hpp"

namespace ecgadv {
namespace fs = std::filesystem;
namespace {

constexpr std::uint64_t kSnapshotNoiseSeed = 0x5eed5eed;

void append_double(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

void require_finite(double value, const char* term, std::uint64_t step) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string("non-finite loss term ") + term + " at step " + std::to_string(step));
  }
}

void zero_grads(const std::vector<ParamRef>& params) {
  for (const auto& p : params) p.tensor->zero_grad();
}

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Tensor out(shape);
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<long>(a.size()));
  return out;
}

Tensor rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Shape shape = t.shape();
  const std::size_t stride = t.size() / shape[0];
  shape[0] = count;
  Tensor out(shape);
  std::copy_n(t.values().begin() + static_cast<long>(begin * stride), count * stride, out.values().begin());
  return out;
}

Tensor scaled(Tensor t, double factor) {
  for (double& v : t.values()) v *= factor;
  return t;
}

std::string checkpoint_stem(std::uint64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04llu", static_cast<unsigned long long>(epoch));
  return buf;
}

}  // namespace

// ---- configuration -------------------------------------------------------------

const char* to_string(NoiseMode mode) { return mode == NoiseMode::kFreshPerStep ? "fresh" : "fixed"; }

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "fresh") return NoiseMode::kFreshPerStep;
  if (name == "fixed") return NoiseMode::kFixedPerBeat;
  throw std::invalid_argument("noise mode must be 'fresh' or 'fixed', got '" + std::string(name) + "'");
}

void TrainingConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be finite and >= 0");
  };
  nonneg(lambda_rec, "lambda_rec");
  nonneg(lambda_class, "lambda_class");
  nonneg(adam.alpha, "alpha");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0,1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0,1)");
  if (!(adam.epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be positive");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (batchnorm)");
  if (!(noise_sigma > 0.0)) throw std::invalid_argument("noise_sigma must be positive");
  if (!(width_scale > 0.0)) throw std::invalid_argument("width_scale must be positive");
  if (precision != "double") {
    throw std::invalid_argument("precision '" + precision + "' is not supported (only 'double')");
  }
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"lambda_rec", lambda_rec},
          {"lambda_class", lambda_class},
          {"alpha", adam.alpha},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"adam_epsilon", adam.epsilon},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"seed", seed},
          {"noise_sigma", noise_sigma},
          {"noise_mode", to_string(noise_mode)},
          {"precision", precision},
          {"snapshot_every", snapshot_every},
          {"checkpoint_every", checkpoint_every},
          {"width_scale", width_scale},
          {"d_label_input", d_label_input},
          {"deterministic", deterministic}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.lambda_class = j.value("lambda_class", c.lambda_class);
  c.adam.alpha = j.value("alpha", c.adam.alpha);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.epsilon = j.value("adam_epsilon", c.adam.epsilon);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.noise_mode = parse_noise_mode(j.value("noise_mode", std::string(to_string(c.noise_mode))));
  c.precision = j.value("precision", c.precision);
  c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.width_scale = j.value("width_scale", c.width_scale);
  c.d_label_input = j.value("d_label_input", c.d_label_input);
  c.deterministic = j.value("deterministic", c.deterministic);
  return c;
}

GeneratorArchitecture TrainingConfig::generator_architecture() const {
  return GeneratorArchitecture{}.scaled(width_scale);
}

DiscriminatorArchitecture TrainingConfig::discriminator_architecture() const {
  DiscriminatorArchitecture a = DiscriminatorArchitecture{}.scaled(width_scale);
  a.label_input = d_label_input;
  return a;
}

// ---- state ------------------------------------------------------------------

GanState make_gan_state(const TrainingConfig& config) {
  config.validate();
  Rng root(config.seed);
  GanState s{GeneratorModel(config.generator_architecture()),
             DiscriminatorModel(config.discriminator_architecture()),
             {},
             {},
             Rng(),
             0,
             0};
  Rng g_init = root.fork(1);
  Rng d_init = root.fork(2);
  s.rng = root.fork(3);
  s.generator.initialize(g_init);
  s.discriminator.initialize(d_init);
  s.g_opt.config = config.adam;
  s.d_opt.config = config.adam;
  return s;
}

// ---- log ----------------------------------------------------------------------

std::string TrainLog::csv_header() {
  return "epoch,step,d_adv_loss,d_class_loss,d_loss,g_adv_loss,g_rec_loss,g_class_loss,g_loss,seconds";
}

std::string TrainLog::to_csv() const {
  std::string out = csv_header() + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.step);
    for (double v : {r.d_adv_loss, r.d_class_loss, r.d_loss, r.g_adv_loss, r.g_rec_loss, r.g_class_loss,
                     r.g_loss}) {
      out += ',';
      append_double(out, v);
    }
    out += ',';
    if (r.seconds) append_double(out, *r.seconds);
    out += '\n';
  }
  return out;
}

void TrainLog::write_csv(const fs::path& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv();
}

TrainLog TrainLog::read_csv(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open train log " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != csv_header()) {
    throw std::runtime_error(path.string() + ": not a train log");
  }
  TrainLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 10) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    StepRecord r;
    r.epoch = std::stoull(fields[0]);
    r.step = std::stoull(fields[1]);
    double* dst[] = {&r.d_adv_loss, &r.d_class_loss, &r.d_loss,  &r.g_adv_loss,
                     &r.g_rec_loss, &r.g_class_loss, &r.g_loss};
    for (std::size_t i = 0; i < 7; ++i) {
      const std::string& s = fields[i + 2];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), *dst[i]);
      if (res.ec != std::errc()) throw std::runtime_error(path.string() + ": bad number '" + s + "'");
    }
    if (!fields[9].empty()) r.seconds = std::stod(fields[9]);
    log.records.push_back(r);
  }
  return log;
}

// ---- one step ---------------------------------------------------------------------

Batch make_batch(std::span<const Beat> beats, std::span<const std::size_t> indices) {
  Batch b;
  b.x = Tensor({indices.size(), kBeatLength});
  b.labels = Tensor({indices.size(), kNumClasses});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Beat& beat = beats[indices[r]];
    if (beat.samples.size() != kBeatLength) {
      throw std::invalid_argument("beat " + std::to_string(indices[r]) + " has " +
                                  std::to_string(beat.samples.size()) + " samples");
    }
    std::copy(beat.samples.begin(), beat.samples.end(), b.x.values().begin() + static_cast<long>(r * kBeatLength));
    b.labels.at(r, index_of(beat.label)) = 1.0;
  }
  b.ids.assign(indices.begin(), indices.end());
  return b;
}

Tensor batch_noise(const Batch& batch, GanState& state, const TrainingConfig& config) {
  const std::size_t B = batch.x.dim(0), L = batch.x.dim(1);
  Tensor z({B, L});
  for (std::size_t r = 0; r < B; ++r) {
    std::vector<double> row;
    if (config.noise_mode == NoiseMode::kFreshPerStep) {
      row = make_noise(state.rng, config.noise_sigma, L);
    } else {
      if (batch.ids.size() != B) throw std::invalid_argument("fixed noise needs beat ids in the batch");
      Rng per_beat = Rng(config.seed).fork(batch.ids[r]);
      row = make_noise(per_beat, config.noise_sigma, L);
    }
    std::copy(row.begin(), row.end(), z.values().begin() + static_cast<long>(r * L));
  }
  return z;
}

namespace {

void require_step_batch(const Batch& batch) {
  require_rank(batch.x, 2, "train_step batch");
  if (batch.x.dim(0) < 2) throw std::invalid_argument("train_step: batch size must be >= 2 (batchnorm)");
}

}  // namespace

void discriminator_step(const Batch& batch, const Tensor& fake, GanState& state, const TrainingConfig& config,
                        StepRecord& rec) {
  require_step_batch(batch);
  const std::size_t B = batch.x.dim(0);
  DiscriminatorModel& D = state.discriminator;
  // Real and fake rows share one batch.
  const auto out = D.forward(stack_rows(batch.x, fake), stack_rows(batch.labels, batch.labels), Mode::kTrain);
  Tensor g_real, g_fake, g_probs_real, g_probs_fake;
  rec.d_adv_loss = adversarial_loss_d(rows(out.realness, 0, B), rows(out.realness, B, B), &g_real, &g_fake);
  const double ce_real = class_loss(rows(out.class_probs, 0, B), batch.labels, &g_probs_real);
  const double ce_fake = class_loss(rows(out.class_probs, B, B), batch.labels, &g_probs_fake);
  rec.d_class_loss = ce_real + ce_fake;
  rec.d_loss = rec.d_adv_loss + config.lambda_class * rec.d_class_loss;
  require_finite(rec.d_adv_loss, "d_adv_loss", rec.step);
  require_finite(rec.d_class_loss, "d_class_loss", rec.step);

  const auto params = D.parameters();
  zero_grads(params);
  D.backward(scaled(stack_rows(g_probs_real, g_probs_fake), config.lambda_class), stack_rows(g_real, g_fake), true);
  adam_step(params, state.d_opt);
}

void generator_step(const Batch& batch, const Tensor& fake, GanState& state, const TrainingConfig& config,
                    StepRecord& rec) {
  require_step_batch(batch);
  DiscriminatorModel& D = state.discriminator;
  // D frozen: inference mode, no parameter gradients.
  const auto out = D.forward(fake, batch.labels, Mode::kInference);
  Tensor g_adv, g_class, g_rec;
  rec.g_adv_loss = adversarial_loss_g(out.realness, &g_adv);
  rec.g_class_loss = class_loss(out.class_probs, batch.labels, &g_class);
  rec.g_rec_loss = reconstruction_loss(fake, batch.x, &g_rec);
  rec.g_loss = rec.g_adv_loss + config.lambda_rec * rec.g_rec_loss + config.lambda_class * rec.g_class_loss;
  require_finite(rec.g_adv_loss, "g_adv_loss", rec.step);
  require_finite(rec.g_rec_loss, "g_rec_loss", rec.step);
  require_finite(rec.g_class_loss, "g_class_loss", rec.step);

  Tensor grad = signal_channel(D.backward(scaled(g_class, config.lambda_class), g_adv, false));
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += config.lambda_rec * g_rec[i];
  const auto params = state.generator.parameters();
  zero_grads(params);
  state.generator.backward(grad, true);
  adam_step(params, state.g_opt);
}

StepRecord train_step(const Batch& batch, GanState& state, const TrainingConfig& config) {
  require_step_batch(batch);
  StepRecord rec;
  rec.step = state.step + 1;
  rec.epoch = state.epoch + 1;
  const Tensor z = batch_noise(batch, state, config);
  const Tensor fake = state.generator.forward(batch.x, batch.labels, z, Mode::kTrain);
  discriminator_step(batch, fake, state, config, rec);
  generator_step(batch, fake, state, config, rec);
  state.step = rec.step;
  return rec;
}

// ---- snapshots ----------------------------------------------------------------------

std::vector<Snapshot> make_snapshots(GeneratorModel& g, std::span<const Beat> beats, std::uint64_t epoch,
                                     const TrainingConfig& config) {
  std::vector<std::size_t> picks;
  for (Label l : kAllLabels) {
    const auto it = std::find_if(beats.begin(), beats.end(), [l](const Beat& b) { return b.label == l; });
    if (it != beats.end()) picks.push_back(static_cast<std::size_t>(it - beats.begin()));
  }
  std::vector<Snapshot> out;
  if (picks.empty()) return out;
  const Batch batch = make_batch(beats, picks);
  Tensor z({picks.size(), kBeatLength});
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto row = make_noise(kSnapshotNoiseSeed + r, config.noise_sigma);
    std::copy(row.begin(), row.end(), z.values().begin() + static_cast<long>(r * kBeatLength));
  }
  const Tensor y = g.forward(batch.x, batch.labels, z, Mode::kInference);
  for (std::size_t r = 0; r < picks.size(); ++r) {
    Snapshot s;
    s.epoch = epoch;
    s.label = beats[picks[r]].label;
    s.real = beats[picks[r]].samples;
    s.generated.assign(y.values().begin() + static_cast<long>(r * kBeatLength),
                       y.values().begin() + static_cast<long>((r + 1) * kBeatLength));
    out.push_back(std::move(s));
  }
  return out;
}

fs::path snapshot_path(const fs::path& dir, std::uint64_t epoch, Label label) {
  return dir / ("epoch_" + std::to_string(epoch) + "_" + to_char(label) + ".csv");
}

void write_snapshot_csv(const fs::path& path, const Snapshot& snapshot) {
  std::string out = "epoch,label,kind";
  for (std::size_t i = 0; i < kBeatLength; ++i) out += ",s" + std::to_string(i);
  out += '\n';
  for (const auto& [kind, samples] : {std::pair{"real", &snapshot.real}, std::pair{"generated", &snapshot.generated}}) {
    out += std::to_string(snapshot.epoch) + "," + to_char(snapshot.label) + "," + kind;
    for (double v : *samples) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out;
}

// ---- epoch loop -----------------------------------------------------------------------

TrainLog train(GanState& state, std::span<const Beat> beats, const TrainingConfig& config, const TrainHooks& hooks) {
  config.validate();
  TrainLog log;
  if (state.epoch >= config.epochs) return log;
  if (beats.size() < 2) throw std::invalid_argument("train: need at least 2 beats");

  std::vector<std::size_t> order(beats.size());
  for (std::uint64_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      if (count < 2) break;
      const Batch batch = make_batch(beats, std::span(order).subspan(start, count));
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord rec = train_step(batch, state, config);
      if (!config.deterministic) {
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      log.records.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
    }
    state.epoch = epoch;
    if (hooks.on_epoch_end) hooks.on_epoch_end(state, epoch);
  }
  return log;
}

namespace {

CheckpointMeta state_meta(const GanState& state, const TrainingConfig& config) {
  CheckpointMeta meta;
  meta.step = state.step;
  meta.epoch = state.epoch;
  meta.seed = config.seed;
  meta.config_hash = config_hash(config);
  meta.extra = {{"rng", state.rng.state()}, {"config", config.to_json()}};
  return meta;
}

void save_pair(GanState& state, const TrainingConfig& config, const fs::path& g_path, const fs::path& d_path) {
  const CheckpointMeta meta = state_meta(state, config);
  save_checkpoint(state.generator, g_path, meta, &state.g_opt);
  save_checkpoint(state.discriminator, d_path, meta, &state.d_opt);
}

// Keys that may change between an interrupted run and its resumption.
bool resumable_key(const std::string& key) {
  return key == "epochs" || key == "snapshot_every" || key == "checkpoint_every" || key == "deterministic";
}

std::optional<std::uint64_t> newest_checkpoint_epoch(const fs::path& dir) {
  static const std::regex pattern(R"(epoch_(\d+)_generator\.ckpt)");
  std::optional<std::uint64_t> best;
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const std::uint64_t e = std::stoull(m[1].str());
    if (fs::exists(dir / (checkpoint_stem(e) + "_discriminator.ckpt")) && (!best || e > *best)) best = e;
  }
  return best;
}

}  // namespace

TrainRunResult train_to_directory(std::span<const Beat> beats, const TrainingConfig& config, const fs::path& out_dir,
                                  bool resume) {
  config.validate();
  const fs::path ckpt_dir = out_dir / "checkpoints";
  const fs::path snap_dir = out_dir / "snapshots";
  fs::create_directories(ckpt_dir);
  fs::create_directories(snap_dir);

  GanState state = make_gan_state(config);
  TrainRunResult result;
  if (resume) {
    const auto epoch = newest_checkpoint_epoch(ckpt_dir);
    if (!epoch) throw TrainingError("resume: no checkpoint pair in " + ckpt_dir.string());
    auto g = load_generator(ckpt_dir / (checkpoint_stem(*epoch) + "_generator.ckpt"));
    auto d = load_discriminator(ckpt_dir / (checkpoint_stem(*epoch) + "_discriminator.ckpt"));
    const nlohmann::json stored = g.meta.extra.at("config");
    const nlohmann::json current = config.to_json();
    for (const auto& [key, value] : current.items()) {
      if (!resumable_key(key) && stored.value(key, nlohmann::json()) != value) {
        throw TrainingError("resume: config key '" + key + "' differs from the checkpointed run (" +
                            stored.value(key, nlohmann::json()).dump() + " vs " + value.dump() + ")");
      }
    }
    state.generator = std::move(g.model);
    state.discriminator = std::move(d.model);
    if (g.optimizer) state.g_opt = *g.optimizer;
    if (d.optimizer) state.d_opt = *d.optimizer;
    state.rng.restore(g.meta.extra.at("rng").get<std::string>());
    state.step = g.meta.step;
    state.epoch = g.meta.epoch;
    result.resumed_from_step = state.step;
    if (fs::exists(out_dir / "train_log.csv")) {
      for (const auto& r : TrainLog::read_csv(out_dir / "train_log.csv").records)
        if (r.step <= state.step) result.log.records.push_back(r);
    }
  } else {
    save_pair(state, config, ckpt_dir / (checkpoint_stem(0) + "_generator.ckpt"),
              ckpt_dir / (checkpoint_stem(0) + "_discriminator.ckpt"));
  }

  TrainHooks hooks;
  hooks.on_step = [&result](const StepRecord& r) { result.log.records.push_back(r); };
  hooks.on_epoch_end = [&](GanState& s, std::uint64_t epoch) {
    if (config.snapshot_every && epoch % config.snapshot_every == 0) {
      for (const auto& snap : make_snapshots(s.generator, beats, epoch, config))
        write_snapshot_csv(snapshot_path(snap_dir, epoch, snap.label), snap);
    }
    if ((config.checkpoint_every && epoch % config.checkpoint_every == 0) || epoch == config.epochs) {
      save_pair(s, config, ckpt_dir / (checkpoint_stem(epoch) + "_generator.ckpt"),
                ckpt_dir / (checkpoint_stem(epoch) + "_discriminator.ckpt"));
      result.log.write_csv(out_dir / "train_log.csv");
    }
  };

  try {
    train(state, beats, config, hooks);
  } catch (const std::exception&) {
    // Keep what was logged; the last checkpoint stays the resume point.
    result.log.write_csv(out_dir / "train_log.csv");
    throw;
  }
  result.log.write_csv(out_dir / "train_log.csv");
  save_pair(state, config, out_dir / "generator.ckpt", out_dir / "discriminator.ckpt");
  result.final_step = state.step;
  return result;
}

// ---- hashing --------------------------------------------------------------------------

std::string sha1_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("sha1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string git_blob_hash(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::string blob = "blob " + std::to_string(body.size());
  blob.push_back('\0');
  blob += body;
  return sha1_hex(blob);
}

std::string config_hash(const TrainingConfig& config) { return sha1_hex(config.to_json().dump()); }

}  // namespace ecgadv
