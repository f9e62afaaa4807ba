#include "ecgadv/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ecgadv {
namespace fs = std::filesystem;
namespace {

constexpr char kMagic[8] = {'E', 'C', 'G', 'A', 'D', 'V', 'C', 'K'};
constexpr std::uint64_t kMaxHeaderBytes = 64ull << 20;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Block {
  std::string name;
  std::string role;
  Shape shape;
  std::span<double> data;
};

nlohmann::json block_entry(const Block& b) {
  return {{"name", b.name}, {"role", b.role}, {"shape", b.shape}};
}

template <class Model>
std::vector<Block> model_blocks(Model& model) {
  std::vector<Block> blocks;
  for (const auto& p : model.parameters()) blocks.push_back({p.name, "param", p.tensor->shape(), p.tensor->values()});
  for (const auto& p : model.buffers()) blocks.push_back({p.name, "buffer", p.tensor->shape(), p.tensor->values()});
  return blocks;
}

template <class Model>
void save_impl(Model& model, ModelKind kind, const fs::path& path, const CheckpointMeta& meta,
               const AdamState* optimizer) {
  std::vector<Block> blocks = model_blocks(model);
  const auto params = model.parameters();
  if (optimizer && !optimizer->m.empty()) {
    if (optimizer->m.size() != params.size()) {
      throw std::invalid_argument("save_checkpoint: optimizer state does not match model parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = const_cast<std::vector<double>&>(optimizer->m[i]);
      auto& v = const_cast<std::vector<double>&>(optimizer->v[i]);
      blocks.push_back({params[i].name, "adam_m", params[i].tensor->shape(), m});
      blocks.push_back({params[i].name, "adam_v", params[i].tensor->shape(), v});
    }
  }

  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model_kind"] = to_string(kind);
  header["architecture"] = model.architecture().to_json();
  header["step"] = meta.step;
  header["epoch"] = meta.epoch;
  header["seed"] = meta.seed;
  header["config_hash"] = meta.config_hash;
  header["extra"] = meta.extra;
  if (optimizer) {
    header["optimizer"] = {{"alpha", optimizer->config.alpha},
                           {"beta1", optimizer->config.beta1},
                           {"beta2", optimizer->config.beta2},
                           {"epsilon", optimizer->config.epsilon},
                           {"t", optimizer->t}};
  }
  header["blocks"] = nlohmann::json::array();
  for (const auto& b : blocks) header["blocks"].push_back(block_entry(b));

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  for (const auto& b : blocks) put_doubles(out, b.data);

  // Write-then-rename so an interrupted save never clobbers a good file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

struct RawCheckpoint {
  nlohmann::json header;
  std::string payload;
};

RawCheckpoint read_raw(const fs::path& path, bool with_payload) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = "corrupt checkpoint " + path.filename().string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": bad magic");
  }
  const std::uint64_t len = get_u64(reinterpret_cast<const unsigned char*>(bytes.data() + 8));
  if (len > kMaxHeaderBytes || 16 + len > bytes.size()) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": header truncated");
  }
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": unreadable header (" + e.what() + ")");
  }
  if (!raw.header.is_object() || !raw.header.contains("format_version")) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": header lacks format_version");
  }
  const auto version = raw.header["format_version"];
  if (!version.is_number_unsigned() || version.get<std::uint64_t>() != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kUnsupportedVersion,
                          "checkpoint format version " + version.dump() + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  if (with_payload) raw.payload = bytes.substr(16 + len);
  return raw;
}

template <class Model, class Arch>
LoadedModel<Model> load_impl(const fs::path& path, ModelKind kind) {
  RawCheckpoint raw = read_raw(path, true);
  const nlohmann::json& h = raw.header;
  const std::string where = "corrupt checkpoint " + path.filename().string();
  try {
    const std::string stored_kind = h.at("model_kind").get<std::string>();
    if (stored_kind != to_string(kind)) {
      throw CheckpointError(CheckpointErrorKind::kKindMismatch,
                            "checkpoint holds a " + stored_kind + ", expected a " + to_string(kind));
    }
    LoadedModel<Model> loaded{Model(Arch::from_json(h.at("architecture"))), {}, std::nullopt};
    loaded.meta.step = h.at("step").get<std::uint64_t>();
    loaded.meta.epoch = h.at("epoch").get<std::uint64_t>();
    loaded.meta.seed = h.at("seed").get<std::uint64_t>();
    loaded.meta.config_hash = h.at("config_hash").get<std::string>();
    loaded.meta.extra = h.at("extra");

    std::vector<Block> expected = model_blocks(loaded.model);
    const auto params = loaded.model.parameters();
    const bool has_optimizer = h.contains("optimizer");
    if (has_optimizer) {
      AdamState st;
      const auto& o = h.at("optimizer");
      st.config = {o.at("alpha").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                   o.at("epsilon").get<double>()};
      st.t = o.at("t").get<std::uint64_t>();
      loaded.optimizer = std::move(st);
    }
    const auto& listed = h.at("blocks");
    const std::size_t moment_blocks = listed.size() > expected.size() ? listed.size() - expected.size() : 0;
    if (has_optimizer && moment_blocks > 0) {
      loaded.optimizer->reset(params);
      loaded.optimizer->t = h.at("optimizer").at("t").get<std::uint64_t>();
      for (std::size_t i = 0; i < params.size(); ++i) {
        expected.push_back({params[i].name, "adam_m", params[i].tensor->shape(), loaded.optimizer->m[i]});
        expected.push_back({params[i].name, "adam_v", params[i].tensor->shape(), loaded.optimizer->v[i]});
      }
    }
    if (listed.size() != expected.size()) {
      throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                            "checkpoint lists " + std::to_string(listed.size()) + " blocks, architecture needs " +
                                std::to_string(expected.size()));
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& e = listed[i];
      const auto shape = e.at("shape").get<Shape>();
      if (e.at("name").get<std::string>() != expected[i].name || e.at("role").get<std::string>() != expected[i].role ||
          shape != expected[i].shape) {
        throw CheckpointError(CheckpointErrorKind::kShapeMismatch,
                              "block " + std::to_string(i) + " is " + e.dump() + ", architecture expects " +
                                  block_entry(expected[i]).dump());
      }
      total += expected[i].data.size();
    }
    if (raw.payload.size() != total * 8) {
      throw CheckpointError(CheckpointErrorKind::kCorrupt,
                            where + ": payload has " + std::to_string(raw.payload.size()) + " bytes, expected " +
                                std::to_string(total * 8));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(raw.payload.data());
    for (auto& b : expected) {
      for (double& d : b.data) {
        d = std::bit_cast<double>(get_u64(p));
        p += 8;
      }
    }
    return loaded;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, where + ": " + e.what());
  }
}

}  // namespace

const char* to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::kIo: return "checkpoint io error";
    case CheckpointErrorKind::kCorrupt: return "corrupt checkpoint";
    case CheckpointErrorKind::kUnsupportedVersion: return "unsupported checkpoint version";
    case CheckpointErrorKind::kKindMismatch: return "checkpoint kind mismatch";
    case CheckpointErrorKind::kShapeMismatch: return "checkpoint shape mismatch";
  }
  return "checkpoint error";
}

const char* to_string(ModelKind kind) {
  return kind == ModelKind::kGenerator ? "generator" : "discriminator";
}

void save_checkpoint(GeneratorModel& model, const fs::path& path, const CheckpointMeta& meta,
                     const AdamState* optimizer) {
  save_impl(model, ModelKind::kGenerator, path, meta, optimizer);
}

void save_checkpoint(DiscriminatorModel& model, const fs::path& path, const CheckpointMeta& meta,
                     const AdamState* optimizer) {
  save_impl(model, ModelKind::kDiscriminator, path, meta, optimizer);
}

LoadedModel<GeneratorModel> load_generator(const fs::path& path) {
  return load_impl<GeneratorModel, GeneratorArchitecture>(path, ModelKind::kGenerator);
}

LoadedModel<DiscriminatorModel> load_discriminator(const fs::path& path) {
  return load_impl<DiscriminatorModel, DiscriminatorArchitecture>(path, ModelKind::kDiscriminator);
}

nlohmann::json read_checkpoint_header(const fs::path& path) { return read_raw(path, false).header; }

}  // namespace ecgadv
