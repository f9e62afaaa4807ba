#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgadv/adam.hpp"
#include "ecgadv/beat.hpp"
#include "ecgadv/models.hpp"
#include "ecgadv/rng.hpp"
#include "json.hpp"

namespace ecgadv {

// ---- losses --------------------------------------------------------------------
// Each returns the scalar; when a grad pointer is given it receives the
// gradient with respect to the first argument(s), same shape.

/// mean_b[(d_real - 1)^2 + d_fake^2]; d_real and d_fake are [batch].
double adversarial_loss_d(const Tensor& d_real, const Tensor& d_fake, Tensor* grad_real = nullptr,
                          Tensor* grad_fake = nullptr);
/// mean_b (d_fake - 1)^2.
double adversarial_loss_g(const Tensor& d_fake, Tensor* grad = nullptr);

inline constexpr double kProbabilityFloor = 1e-12;
/// Mean categorical cross-entropy; probs clamped below at 1e-12.
double class_loss(const Tensor& probs, const Tensor& one_hot, Tensor* grad = nullptr);
/// mean_b mean_l (g_out - x)^2; both [batch, length].
double reconstruction_loss(const Tensor& g_out, const Tensor& x, Tensor* grad = nullptr);

// ---- configuration -----------------------------------------------------------------

enum class NoiseMode { kFreshPerStep, kFixedPerBeat };
const char* to_string(NoiseMode mode);
NoiseMode parse_noise_mode(std::string_view name);

struct TrainingConfig {
  double lambda_rec = 1.0;
  double lambda_class = 10.0;
  AdamConfig adam{};
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  double noise_sigma = kNoiseSigma;
  NoiseMode noise_mode = NoiseMode::kFreshPerStep;
  /// Only "double" is implemented.
  std::string precision = "double";
  /// Epochs between snapshot dumps; 0 disables.
  std::size_t snapshot_every = 1;
  /// Epochs between checkpoints; 0 writes only the initial and final ones.
  std::size_t checkpoint_every = 10;
  /// Multiplier on every layer width (0.5 for the width-halved toy model).
  double width_scale = 1.0;
  /// Feed the one-hot label to the discriminator as extra input channels.
  bool d_label_input = false;
  /// Omit wall-clock fields so identical runs produce identical files.
  bool deterministic = true;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
  GeneratorArchitecture generator_architecture() const;
  DiscriminatorArchitecture discriminator_architecture() const;
};

// ---- state and log ----------------------------------------------------------------

struct GanState {
  GeneratorModel generator;
  DiscriminatorModel discriminator;
  AdamState g_opt;
  AdamState d_opt;
  Rng rng;
  std::uint64_t step = 0;
  /// Epochs completed.
  std::uint64_t epoch = 0;
};

/// Fresh models initialized from config.seed.
GanState make_gan_state(const TrainingConfig& config);

struct StepRecord {
  std::uint64_t epoch = 0;  // 1-based epoch the step belongs to
  std::uint64_t step = 0;   // 1-based global step
  double d_adv_loss = 0.0;
  double d_class_loss = 0.0;  // real + fake terms
  double d_loss = 0.0;
  double g_adv_loss = 0.0;
  double g_rec_loss = 0.0;
  double g_class_loss = 0.0;
  double g_loss = 0.0;
  std::optional<double> seconds;
};

struct TrainLog {
  std::vector<StepRecord> records;

  static std::string csv_header();
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static TrainLog read_csv(const std::filesystem::path& path);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Batch {
  Tensor x;       // [batch, 280]
  Tensor labels;  // [batch, 4] one-hot
  /// Dataset indices, used for per-beat fixed noise.
  std::vector<std::size_t> ids;
};

Batch make_batch(std::span<const Beat> beats, std::span<const std::size_t> indices);

/// One discriminator update followed by one generator update. Throws
/// TrainingError naming the first non-finite loss term; in that case no
/// parameter has been modified by the failing update.
StepRecord train_step(const Batch& batch, GanState& state, const TrainingConfig& config);

/// The two halves of train_step. `fake` must come from the generator's most
/// recent train-mode forward on this batch (generator_step backpropagates
/// through that forward). Losses are written into `rec`.
void discriminator_step(const Batch& batch, const Tensor& fake, GanState& state, const TrainingConfig& config,
                        StepRecord& rec);
void generator_step(const Batch& batch, const Tensor& fake, GanState& state, const TrainingConfig& config,
                    StepRecord& rec);

/// Noise rows for a batch according to config.noise_mode.
Tensor batch_noise(const Batch& batch, GanState& state, const TrainingConfig& config);

// ---- epochs, snapshots, checkpoints --------------------------------------------------

struct Snapshot {
  std::uint64_t epoch = 0;
  Label label = Label::N;
  std::vector<double> real;
  std::vector<double> generated;
};

/// One beat per class present in `beats` (the first of each class), pushed
/// through G in inference mode with noise from a fixed seed.
std::vector<Snapshot> make_snapshots(GeneratorModel& g, std::span<const Beat> beats,
                                     std::uint64_t epoch, const TrainingConfig& config);
/// Rows: epoch,label,kind,s0..s279 with kind real|generated.
void write_snapshot_csv(const std::filesystem::path& path, const Snapshot& snapshot);
std::filesystem::path snapshot_path(const std::filesystem::path& dir, std::uint64_t epoch, Label label);

struct TrainHooks {
  /// After every completed epoch (epoch is 1-based).
  std::function<void(GanState&, std::uint64_t epoch)> on_epoch_end;
  std::function<void(const StepRecord&)> on_step;
};

/// Runs epochs state.epoch+1 .. config.epochs. Batches come from a seeded
/// shuffle; a trailing batch smaller than 2 is dropped (batchnorm).
TrainLog train(GanState& state, std::span<const Beat> beats, const TrainingConfig& config,
               const TrainHooks& hooks = {});

/// Everything cmd_train writes: train_log.csv, snapshots/, checkpoints/,
/// generator.ckpt, discriminator.ckpt. With `resume`, continues from the
/// newest checkpoint in out_dir/checkpoints.
struct TrainRunResult {
  TrainLog log;
  std::uint64_t resumed_from_step = 0;
  std::uint64_t final_step = 0;
};
TrainRunResult train_to_directory(std::span<const Beat> beats, const TrainingConfig& config,
                                  const std::filesystem::path& out_dir, bool resume);

/// SHA-1 of a string, hex.
std::string sha1_hex(std::string_view data);
/// Git blob hash of a file: sha1("blob <size>\0" + contents).
std::string git_blob_hash(const std::filesystem::path& path);
/// Hash of the canonical JSON of a config.
std::string config_hash(const TrainingConfig& config);

}  // namespace ecgadv
