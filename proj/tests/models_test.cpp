// Generator/discriminator assembly, noise, and checkpoints.

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <fstream>
#include <numeric>
#include <unistd.h>

#include "ecgadv/checkpoint.hpp"
#include "ecgadv/models.hpp"
#include "ecgadv/ops.hpp"

using namespace ecgadv;
namespace fs = std::filesystem;

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

Tensor labels_for(std::size_t batch) {
  std::vector<Label> ls;
  for (std::size_t i = 0; i < batch; ++i) ls.push_back(kAllLabels[i % kNumClasses]);
  return one_hot(ls);
}

template <class Model>
void zero_parameters(Model& m) {
  for (auto& p : m.parameters()) p.tensor->fill(0.0);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Rewrites the JSON header of a checkpoint, keeping the payload.
void edit_header(const fs::path& p, const std::function<void(nlohmann::json&)>& edit) {
  const std::string bytes = slurp(p);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  auto header = nlohmann::json::parse(bytes.substr(16, len));
  edit(header);
  const std::string text = header.dump();
  std::string out = bytes.substr(0, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
  out += text;
  out += bytes.substr(16 + len);
  spit(p, out);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ecgadv_models_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Shape walk written independently of the model code: conv k*cin*cout + cout,
// batchnorm 2*c, dense in*out + out.
std::size_t generator_count_oracle(std::size_t in, const std::vector<std::size_t>& enc,
                                   const std::vector<std::size_t>& dec) {
  std::size_t n = 0;
  for (std::size_t w : enc) {
    n += 3 * in * w + w + 2 * w;
    in = w;
  }
  for (std::size_t w : dec) {
    n += 3 * in * w + w + 2 * w;
    in = w;
  }
  return n + 3 * in * 1 + 1;
}

// The scalar sums hundreds of projected outputs, so FD round-off is ~1e-10;
// conv biases feeding train-mode batchnorm have an exactly zero gradient.
GradCheckOptions model_check_options() {
  GradCheckOptions opt;
  opt.coords_per_block = 3;
  opt.denominator_floor = 1e-4;
  return opt;
}

}  // namespace

// ---- generator ---------------------------------------------------------------

TEST(Generator, OutputShapeRangeAndLengthTrace) {
  Rng rng(3);
  GeneratorModel g;
  g.initialize(rng);
  const std::size_t B = 3;
  Tensor x = uniform_tensor({B, 280}, rng), z = uniform_tensor({B, 280}, rng);
  for (Mode mode : {Mode::kTrain, Mode::kInference}) {
    const Tensor y = g.forward(x, labels_for(B), z, mode);
    ASSERT_EQ(y.shape(), (Shape{B, 280}));
    for (double v : y.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_TRUE(y.all_finite());
    EXPECT_EQ(g.length_trace(), (std::vector<std::size_t>{280, 140, 70, 35, 70, 140, 280}));
  }
}

TEST(Generator, ZeroParametersGiveOneHalf) {
  GeneratorModel g;
  zero_parameters(g);
  Rng rng(4);
  const Tensor y = g.forward(uniform_tensor({2, 280}, rng), labels_for(2), uniform_tensor({2, 280}, rng),
                             Mode::kTrain);
  for (double v : y.values()) EXPECT_EQ(v, 0.5);
}

TEST(Generator, ParameterCountMatchesShapeWalk) {
  GeneratorModel full;
  EXPECT_EQ(full.parameter_count(),
            generator_count_oracle(6, {32, 32, 64, 64, 128, 128}, {128, 64, 32}));
  // Hand total for the default widths.
  EXPECT_EQ(full.parameter_count(), 177793u);
  GeneratorModel half(GeneratorArchitecture{}.scaled(0.5));
  EXPECT_EQ(half.parameter_count(), generator_count_oracle(6, {16, 16, 32, 32, 64, 64}, {64, 32, 16}));
}

TEST(Generator, DeterministicForSeed) {
  auto run = [] {
    Rng rng(11);
    GeneratorModel g;
    g.initialize(rng);
    Rng data(5);
    Tensor x = uniform_tensor({2, 280}, data), z = uniform_tensor({2, 280}, data);
    return g.forward(x, labels_for(2), z, Mode::kTrain);
  };
  const Tensor a = run(), b = run();
  EXPECT_EQ(0, std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)));
}

TEST(Generator, RejectsMalformedOneHot) {
  GeneratorModel g;
  Rng rng(1);
  Tensor x = uniform_tensor({1, 280}, rng), z = uniform_tensor({1, 280}, rng);
  Tensor two_hot({1, 4}, std::vector<double>{1, 1, 0, 0});
  Tensor fractional({1, 4}, std::vector<double>{0.5, 0.5, 0, 0});
  Tensor none({1, 4});
  for (const Tensor* y : {&two_hot, &fractional, &none}) {
    EXPECT_THROW(g.forward(x, *y, z, Mode::kInference), std::invalid_argument);
  }
  EXPECT_THROW(g.forward(x, labels_for(1), Tensor({1, 279}), Mode::kInference), ShapeError);
}

TEST(Generator, InputChannelLayout) {
  Rng rng(2);
  Tensor x = uniform_tensor({2, 280}, rng), z = uniform_tensor({2, 280}, rng);
  const Tensor in = GeneratorModel::assemble_input(x, labels_for(2), z);
  ASSERT_EQ(in.shape(), (Shape{2, 280, 6}));
  for (std::size_t l : {0u, 139u, 279u}) {
    EXPECT_EQ(in.at(1, l, 0), x.at(1, l));
    EXPECT_EQ(in.at(1, l, 1), z.at(1, l));
    EXPECT_EQ(in.at(1, l, 2), 0.0);
    EXPECT_EQ(in.at(1, l, 3), 1.0);  // row 1 is class S
  }
}

TEST(Generator, FullBackwardMatchesFiniteDifferences) {
  Rng rng(21);
  GeneratorModel g;
  g.initialize(rng);
  Tensor x = uniform_tensor({2, 280}, rng), z = uniform_tensor({2, 280}, rng);
  const Tensor input = GeneratorModel::assemble_input(x, labels_for(2), z);
  const GradCheckOptions opt = model_check_options();
  for (Mode mode : {Mode::kTrain, Mode::kInference}) {
    const GradCheckReport r = gradient_check(generator_gradcheck_problem(g, input, mode, rng), opt);
    EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error;
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

// ---- discriminator -------------------------------------------------------------

TEST(Discriminator, ShapesAndLengthTrace) {
  Rng rng(7);
  DiscriminatorModel d;
  d.initialize(rng);
  const auto out = d.forward(uniform_tensor({3, 280}, rng), labels_for(3), Mode::kTrain);
  ASSERT_EQ(out.class_probs.shape(), (Shape{3, 4}));
  ASSERT_EQ(out.realness.shape(), (Shape{3}));
  // Kernel 3, padding 1, stride 2: floor((35 + 2 - 3) / 2) + 1 = 18.
  EXPECT_EQ(d.length_trace(), (std::vector<std::size_t>{280, 140, 70, 35, 18}));
  EXPECT_EQ(d.flattened_length(), 18u);
}

TEST(Discriminator, ClassProbabilitiesAreDistributions) {
  Rng rng(8);
  DiscriminatorModel d;
  d.initialize(rng);
  const auto out = d.forward(uniform_tensor({8, 280}, rng), labels_for(8), Mode::kInference);
  for (std::size_t b = 0; b < 8; ++b) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_GT(out.class_probs.at(b, c), 0.0);
      sum += out.class_probs.at(b, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_GT(out.realness[b], 0.0);
    EXPECT_LT(out.realness[b], 1.0);
  }
}

TEST(Discriminator, ZeroParametersGiveUniformAndOneHalf) {
  DiscriminatorModel d;
  zero_parameters(d);
  Rng rng(9);
  const auto out = d.forward(uniform_tensor({2, 280}, rng), labels_for(2), Mode::kTrain);
  for (double p : out.class_probs.values()) EXPECT_EQ(p, 0.25);
  for (double r : out.realness.values()) EXPECT_EQ(r, 0.5);
}

TEST(Discriminator, ParameterCountMatchesShapeWalk) {
  for (bool label_input : {false, true}) {
    std::size_t n = 0, in = label_input ? 5 : 1, length = 280;
    const std::vector<std::size_t> convs{16, 16, 32, 32, 128, 128, 256, 256};
    for (std::size_t i = 0; i < convs.size(); ++i) {
      n += 3 * in * convs[i] + convs[i] + 2 * convs[i];
      in = convs[i];
      if (i % 2 == 1) length = (length + 1) / 2;  // ceil halving == floor formula for k3 p1 s2
    }
    std::size_t features = length * in;
    for (std::size_t w : {64u, 32u}) {
      n += features * w + w;
      features = w;
    }
    n += 32 * 4 + 4 + 32 * 1 + 1;
    DiscriminatorArchitecture arch;
    arch.label_input = label_input;
    DiscriminatorModel d(arch);
    EXPECT_EQ(d.parameter_count(), n) << label_input;
  }
}

TEST(Discriminator, LabelChannelsOnlyWithLabelInput) {
  Rng rng(25);
  const Tensor x = uniform_tensor({2, 280}, rng);
  DiscriminatorModel plain;
  const Tensor in1 = plain.assemble_input(x, Tensor());
  ASSERT_EQ(in1.shape(), (Shape{2, 280, 1}));
  EXPECT_EQ(in1.at(1, 17, 0), x.at(1, 17));

  DiscriminatorArchitecture arch;
  arch.label_input = true;
  DiscriminatorModel conditioned(arch);
  const Tensor y = labels_for(2);
  const Tensor in5 = conditioned.assemble_input(x, y);
  ASSERT_EQ(in5.shape(), (Shape{2, 280, 5}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t l : {0u, 139u, 279u}) {
      EXPECT_EQ(in5.at(b, l, 0), x.at(b, l));
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(in5.at(b, l, 1 + c), y.at(b, c));
    }
  EXPECT_THROW(conditioned.assemble_input(x, Tensor()), std::invalid_argument);
  EXPECT_THROW(plain.forward_input(in5, Mode::kInference), ShapeError);
}

TEST(Discriminator, UntrainedRealnessVaries) {
  Rng rng(10);
  DiscriminatorModel d;
  d.initialize(rng);
  std::vector<double> r;
  for (int chunk = 0; chunk < 10; ++chunk) {
    const auto out = d.forward(uniform_tensor({100, 280}, rng), labels_for(100), Mode::kInference);
    r.insert(r.end(), out.realness.values().begin(), out.realness.values().end());
  }
  ASSERT_EQ(r.size(), 1000u);
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / r.size();
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  EXPECT_GT(var / r.size(), 0.0);
}

TEST(Discriminator, FullBackwardMatchesFiniteDifferences) {
  Rng rng(22);
  const GradCheckOptions opt = model_check_options();
  for (bool label_input : {false, true}) {
    DiscriminatorArchitecture arch;
    arch.label_input = label_input;
    DiscriminatorModel d(arch);
    d.initialize(rng);
    const Tensor input = d.assemble_input(uniform_tensor({2, 280}, rng), labels_for(2));
    for (Mode mode : {Mode::kTrain, Mode::kInference}) {
      const GradCheckReport r = gradient_check(discriminator_gradcheck_problem(d, input, mode, rng), opt);
      EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " label_input " << label_input;
      EXPECT_EQ(r.blocks.size(), d.parameters().size() + 1);
    }
  }
}

TEST(GradientCheck, FrozenPatternSeparatesKinkFromBackwardErrors) {
  // Perturbing a weight moves some leaky-ReLU inputs across zero; with the
  // pattern frozen the FD estimate matches backward to round-off.
  Rng rng(24);
  GeneratorModel g;
  g.initialize(rng);
  const Tensor input = GeneratorModel::assemble_input(uniform_tensor({2, 280}, rng), labels_for(2),
                                                      uniform_tensor({2, 280}, rng));
  const GradCheckOptions opt = model_check_options();
  GradCheckProblem frozen = generator_gradcheck_problem(g, input, Mode::kTrain, rng);
  GradCheckProblem free = frozen;
  free.freeze_patterns = nullptr;
  const GradCheckReport with = gradient_check(frozen, opt);
  const GradCheckReport without = gradient_check(free, opt);
  EXPECT_LE(with.max_rel_error, 1e-4);
  EXPECT_GT(without.max_rel_error, 1e-3);
}

TEST(Discriminator, FrozenBackwardLeavesParameterGradsUntouched) {
  Rng rng(23);
  DiscriminatorModel d;
  d.initialize(rng);
  for (auto& p : d.parameters()) p.tensor->zero_grad();
  d.forward(uniform_tensor({2, 280}, rng), labels_for(2), Mode::kInference);
  const Tensor gx = d.backward(Tensor(), Tensor({2}, std::vector<double>{1.0, -1.0}), false);
  EXPECT_EQ(gx.shape(), (Shape{2, 280, 1}));
  for (auto& p : d.parameters())
    for (double g : p.tensor->grad()) ASSERT_EQ(g, 0.0) << p.name;
  double norm = 0.0;
  for (double g : signal_channel(gx).values()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

// ---- noise -------------------------------------------------------------------

TEST(Noise, KernelMatchesGaussianDensity) {
  const auto k = gaussian_kernel(4.0);
  ASSERT_EQ(k.size(), 25u);  // radius 12
  std::vector<double> density;
  for (int i = -12; i <= 12; ++i) density.push_back(std::exp(-(i * i) / 32.0) / (4.0 * std::sqrt(2.0 * M_PI)));
  const double total = std::accumulate(density.begin(), density.end(), 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], density[i] / total, 1e-15);
  EXPECT_THROW(gaussian_kernel(0.0), std::invalid_argument);
}

TEST(Noise, ReflectBoundaryHandCase) {
  const std::vector<double> k{0.25, 0.5, 0.25};
  const auto y = smooth_reflect(std::vector<double>{1, 2, 4}, k);
  // Padded as 1 | 1 2 4 | 4.
  EXPECT_DOUBLE_EQ(y[0], 1.25);
  EXPECT_DOUBLE_EQ(y[1], 2.25);
  EXPECT_DOUBLE_EQ(y[2], 3.5);
}

TEST(Noise, ConstantUnchangedAndVarianceReduced) {
  const auto k = gaussian_kernel(4.0);
  const auto flat = smooth_reflect(std::vector<double>(280, 0.37), k);
  for (double v : flat) EXPECT_NEAR(v, 0.37, 1e-9);

  Rng rng(12);
  std::vector<double> raw(280);
  for (double& v : raw) v = rng.uniform();
  const auto smooth = smooth_reflect(raw, k);
  auto variance = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / v.size();
  };
  EXPECT_LT(variance(smooth), variance(raw));
}

TEST(Noise, MakeNoiseIsSeededAndInRange) {
  const auto a = make_noise(5), b = make_noise(5), c = make_noise(6);
  ASSERT_EQ(a.size(), 280u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (double v : a) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// ---- checkpoints ----------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExactAndByteIdentical) {
  TempDir dir;
  Rng rng(31);
  GeneratorModel g(GeneratorArchitecture{}.scaled(0.5));
  g.initialize(rng);
  // Non-default running statistics.
  g.forward(uniform_tensor({4, 280}, rng), labels_for(4), uniform_tensor({4, 280}, rng), Mode::kTrain);
  CheckpointMeta meta;
  meta.step = 17;
  meta.epoch = 2;
  meta.seed = 99;
  meta.config_hash = "abc";
  save_checkpoint(g, dir.path / "a.ckpt", meta);

  auto loaded = load_generator(dir.path / "a.ckpt");
  EXPECT_EQ(loaded.model.architecture(), g.architecture());
  EXPECT_EQ(loaded.meta.step, 17u);
  EXPECT_EQ(loaded.meta.seed, 99u);
  EXPECT_EQ(loaded.meta.config_hash, "abc");
  EXPECT_FALSE(loaded.optimizer.has_value());
  auto before = g.parameters(), after = loaded.model.parameters();
  auto bb = g.buffers(), ab = loaded.model.buffers();
  before.insert(before.end(), bb.begin(), bb.end());
  after.insert(after.end(), ab.begin(), ab.end());
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    ASSERT_EQ(before[i].tensor->size(), after[i].tensor->size());
    EXPECT_EQ(0, std::memcmp(before[i].tensor->values().data(), after[i].tensor->values().data(),
                             before[i].tensor->size() * sizeof(double)))
        << before[i].name;
  }
  save_checkpoint(loaded.model, dir.path / "b.ckpt", loaded.meta);
  EXPECT_EQ(slurp(dir.path / "a.ckpt"), slurp(dir.path / "b.ckpt"));
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
  TempDir dir;
  Rng rng(32);
  DiscriminatorModel d(DiscriminatorArchitecture{}.scaled(0.5));
  d.initialize(rng);
  auto params = d.parameters();
  for (auto& p : params) {
    p.tensor->zero_grad();
    for (double& g : p.tensor->grad()) g = rng.uniform() - 0.5;
  }
  AdamState adam;
  adam_step(params, adam);
  adam_step(params, adam);
  save_checkpoint(d, dir.path / "d.ckpt", {}, &adam);
  auto loaded = load_discriminator(dir.path / "d.ckpt");
  ASSERT_TRUE(loaded.optimizer.has_value());
  EXPECT_EQ(loaded.optimizer->t, 2u);
  EXPECT_EQ(loaded.optimizer->m, adam.m);
  EXPECT_EQ(loaded.optimizer->v, adam.v);
  EXPECT_EQ(loaded.optimizer->config.beta1, 0.5);
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  TempDir dir;
  GeneratorModel g(GeneratorArchitecture{}.scaled(0.5));
  save_checkpoint(g, dir.path / "g.ckpt");
  const std::string bytes = slurp(dir.path / "g.ckpt");
  for (std::size_t keep : {bytes.size() - 8, bytes.size() / 2, std::size_t{12}, std::size_t{0}}) {
    spit(dir.path / "t.ckpt", bytes.substr(0, keep));
    try {
      load_generator(dir.path / "t.ckpt");
      ADD_FAILURE() << "loaded a file truncated to " << keep << " bytes";
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.kind(), CheckpointErrorKind::kCorrupt);
      EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
    }
  }
}

TEST(Checkpoint, GeneratorRejectedAsDiscriminator) {
  TempDir dir;
  GeneratorModel g(GeneratorArchitecture{}.scaled(0.5));
  save_checkpoint(g, dir.path / "g.ckpt");
  try {
    load_discriminator(dir.path / "g.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::kKindMismatch);
  }
}

TEST(Checkpoint, VersionAndShapeMismatchDetected) {
  TempDir dir;
  GeneratorModel g(GeneratorArchitecture{}.scaled(0.5));
  save_checkpoint(g, dir.path / "v.ckpt");
  edit_header(dir.path / "v.ckpt", [](nlohmann::json& h) { h["format_version"] = 7; });
  try {
    load_generator(dir.path / "v.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::kUnsupportedVersion);
  }

  save_checkpoint(g, dir.path / "s.ckpt");
  edit_header(dir.path / "s.ckpt", [](nlohmann::json& h) { h["architecture"]["encoder_widths"][0] = 20; });
  try {
    load_generator(dir.path / "s.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointErrorKind::kShapeMismatch);
  }
}
