#pragma once

// Checkpoint container:
//   "ECGADVCK" | u64 LE header length | JSON header | f64 LE blocks
// Blocks follow the order listed in the header.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "ecgadv/adam.hpp"
#include "ecgadv/models.hpp"
#include "json.hpp"

namespace ecgadv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorKind { kIo, kCorrupt, kUnsupportedVersion, kKindMismatch, kShapeMismatch };
const char* to_string(CheckpointErrorKind kind);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

enum class ModelKind { kGenerator, kDiscriminator };
const char* to_string(ModelKind kind);

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  /// Free-form extras (RNG state, training config, ...).
  nlohmann::json extra = nlohmann::json::object();
};

template <class Model>
struct LoadedModel {
  Model model;
  CheckpointMeta meta;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(GeneratorModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {}, const AdamState* optimizer = nullptr);
void save_checkpoint(DiscriminatorModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {}, const AdamState* optimizer = nullptr);

LoadedModel<GeneratorModel> load_generator(const std::filesystem::path& path);
LoadedModel<DiscriminatorModel> load_discriminator(const std::filesystem::path& path);

/// Parsed header only; does not read parameter blocks.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace ecgadv
