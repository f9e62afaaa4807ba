#pragma once

// Similarity metrics between generated and real beats, one-vs-rest
// classification metrics, rank AUC, and the generator/discriminator
// evaluation protocols built on them.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgadv/beat.hpp"
#include "json.hpp"

namespace ecgadv {

class GeneratorModel;
class DiscriminatorModel;

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- signal similarity -----------------------------------------------------------

double mse(std::span<const double> a, std::span<const double> b);
/// sqrt(mse(a, b)) / (max(reference) - min(reference)).
double nrmse(std::span<const double> a, std::span<const double> reference);
/// Pearson correlation at zero lag.
double cross_correlation(std::span<const double> a, std::span<const double> b);

struct SsimOptions {
  std::size_t window = 11;
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all stride-1 windows, uniform weights, population moments.
double ssim_1d(std::span<const double> a, std::span<const double> b, const SsimOptions& options = {});

struct SimilarityMetrics {
  double mse = 0.0;
  double ssim = 0.0;
  double cross_correlation = 0.0;
  double nrmse = 0.0;
  std::size_t n_pairs = 0;
};

struct SimilarityReport {
  /// Uniform mean over all pairs.
  SimilarityMetrics overall;
  std::array<std::optional<SimilarityMetrics>, kNumClasses> per_class;

  nlohmann::json to_json() const;
  /// Rows all,N,S,V,F (absent classes omitted); columns n_pairs,mse,ssim,
  /// cross_correlation,nrmse.
  std::string to_csv() const;
};

/// generated[i] is compared against reference[i]; classes come from the reference.
SimilarityReport similarity_report(std::span<const Beat> reference, std::span<const Beat> generated,
                                   const SsimOptions& options = {});

// ---- classification ----------------------------------------------------------------

struct ClassMetrics {
  std::size_t support = 0;  // true count of the class
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  /// Names of the metrics whose denominator was 0 (reported as 0).
  std::vector<std::string> undefined;
};

struct ClassificationReport {
  std::vector<std::string> class_names;
  /// confusion[truth][predicted].
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  std::optional<double> auc;

  nlohmann::json to_json() const;
  /// One row per class (class,support,sensitivity,specificity,precision,f1)
  /// then an "all" row carrying accuracy in every metric column.
  std::string to_csv() const;
};

/// predictions and labels are class indices below class_names.size().
ClassificationReport classification_report(std::span<const std::size_t> predictions,
                                           std::span<const std::size_t> labels,
                                           std::vector<std::string> class_names);

/// Mann-Whitney AUC with midranks; labels are 0 (negative) or 1 (positive).
double auc(std::span<const double> scores, std::span<const int> labels);

// ---- evaluation protocols -------------------------------------------------------------

/// Produces one beat per input beat with the same label.
class Synthesizer {
 public:
  virtual ~Synthesizer() = default;
  virtual std::vector<Beat> synthesize(std::span<const Beat> beats, std::uint64_t seed) = 0;
};

struct Judgement {
  std::array<double, kNumClasses> class_probs{};
  double realness = 0.0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::vector<Judgement> judge(std::span<const Beat> beats) = 0;
};

/// Runs G in inference mode; beat i gets noise from the i-th draw of Rng(seed).
class GeneratorSynthesizer : public Synthesizer {
 public:
  GeneratorSynthesizer(GeneratorModel& g, double noise_sigma, std::size_t batch_size = 256);
  std::vector<Beat> synthesize(std::span<const Beat> beats, std::uint64_t seed) override;

 private:
  GeneratorModel& g_;
  double noise_sigma_;
  std::size_t batch_size_;
};

class DiscriminatorJudge : public Judge {
 public:
  explicit DiscriminatorJudge(DiscriminatorModel& d, std::size_t batch_size = 256);
  std::vector<Judgement> judge(std::span<const Beat> beats) override;

 private:
  DiscriminatorModel& d_;
  std::size_t batch_size_;
};

inline constexpr double kRealnessThreshold = 0.5;

struct DiscriminatorEvaluation {
  ClassificationReport real;         // 4-class on real beats
  ClassificationReport adversarial;  // 4-class on generated beats
  /// Binary over the 2n union, positive class "adversarial", score 1 - realness.
  ClassificationReport detection;
};

SimilarityReport evaluate_generator(Synthesizer& g, std::span<const Beat> test_beats, std::uint64_t seed,
                                    const SsimOptions& options = {});

DiscriminatorEvaluation evaluate_discriminator(Judge& d, std::span<const Beat> real_beats,
                                               std::span<const Beat> generated);
DiscriminatorEvaluation evaluate_discriminator(Judge& d, std::span<const Beat> real_beats, Synthesizer& g,
                                               std::uint64_t seed);

/// One header and one row:, n,accuracy,sensitivity,specificity,
/// precision,f1,auc with adversarial as the positive class.
std::string detection_csv(const ClassificationReport& detection);

std::vector<std::string> class_names();

}  // namespace ecgadv
