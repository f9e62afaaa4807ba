#include "ecgadv/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "ecgadv/models.hpp"

namespace ecgadv {
namespace {

void require_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw MetricError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()));
  }
  if (a.empty()) throw MetricError(std::string(what) + ": empty input");
}

double mean_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

void append_double(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

nlohmann::json to_json(const SimilarityMetrics& m) {
  return {{"mse", m.mse},
          {"ssim", m.ssim},
          {"cross_correlation", m.cross_correlation},
          {"nrmse", m.nrmse},
          {"n_pairs", m.n_pairs}};
}

void append_row(std::string& out, const std::string& name, const SimilarityMetrics& m) {
  out += name + "," + std::to_string(m.n_pairs);
  for (double v : {m.mse, m.ssim, m.cross_correlation, m.nrmse}) {
    out += ',';
    append_double(out, v);
  }
  out += '\n';
}

}  // namespace

double mse(std::span<const double> a, std::span<const double> b) {
  require_pair(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / a.size();
}

double nrmse(std::span<const double> a, std::span<const double> reference) {
  require_pair(a, reference, "nrmse");
  const auto [lo, hi] = std::minmax_element(reference.begin(), reference.end());
  if (!(*hi > *lo)) throw MetricError("nrmse: constant reference signal");
  return std::sqrt(mse(a, reference)) / (*hi - *lo);
}

double cross_correlation(std::span<const double> a, std::span<const double> b) {
  require_pair(a, b, "cross_correlation");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw MetricError("cross_correlation: zero-variance input");
  // Rounding can push |r| a hair past 1.
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double ssim_1d(std::span<const double> a, std::span<const double> b, const SsimOptions& options) {
  require_pair(a, b, "ssim_1d");
  const std::size_t w = options.window;
  if (w == 0) throw MetricError("ssim_1d: window must be positive");
  if (a.size() < w) {
    throw MetricError("ssim_1d: signal length " + std::to_string(a.size()) + " shorter than window " +
                      std::to_string(w));
  }
  const double c1 = std::pow(options.k1 * options.dynamic_range, 2);
  const double c2 = std::pow(options.k2 * options.dynamic_range, 2);
  const std::size_t windows = a.size() - w + 1;
  double total = 0.0;
  for (std::size_t s = 0; s < windows; ++s) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = s; i < s + w; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= w;
    mb /= w;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = s; i < s + w; ++i) {
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
      cov += (a[i] - ma) * (b[i] - mb);
    }
    va /= w;
    vb /= w;
    cov /= w;
    total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / windows;
}

// ---- similarity report --------------------------------------------------------------

nlohmann::json SimilarityReport::to_json() const {
  nlohmann::json j;
  j["overall"] = ecgadv::to_json(overall);
  j["per_class"] = nlohmann::json::object();
  for (Label l : kAllLabels)
    if (per_class[index_of(l)]) j["per_class"][std::string(1, to_char(l))] = ecgadv::to_json(*per_class[index_of(l)]);
  return j;
}

std::string SimilarityReport::to_csv() const {
  std::string out = "subset,n_pairs,mse,ssim,cross_correlation,nrmse\n";
  append_row(out, "all", overall);
  for (Label l : kAllLabels)
    if (per_class[index_of(l)]) append_row(out, std::string(1, to_char(l)), *per_class[index_of(l)]);
  return out;
}

SimilarityReport similarity_report(std::span<const Beat> reference, std::span<const Beat> generated,
                                   const SsimOptions& options) {
  if (reference.size() != generated.size()) {
    throw MetricError("similarity_report: " + std::to_string(reference.size()) + " references vs " +
                      std::to_string(generated.size()) + " generated beats");
  }
  if (reference.empty()) throw MetricError("similarity_report: empty input");
  SimilarityReport report;
  std::array<SimilarityMetrics, kNumClasses> sums{};
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& real = reference[i].samples;
    const auto& fake = generated[i].samples;
    SimilarityMetrics m;
    m.mse = mse(fake, real);
    m.ssim = ssim_1d(fake, real, options);
    m.cross_correlation = cross_correlation(fake, real);
    m.nrmse = nrmse(fake, real);
    for (SimilarityMetrics* acc : {&report.overall, &sums[index_of(reference[i].label)]}) {
      acc->mse += m.mse;
      acc->ssim += m.ssim;
      acc->cross_correlation += m.cross_correlation;
      acc->nrmse += m.nrmse;
      ++acc->n_pairs;
    }
  }
  auto finish = [](SimilarityMetrics& m) {
    const double n = static_cast<double>(m.n_pairs);
    m.mse /= n;
    m.ssim /= n;
    m.cross_correlation /= n;
    m.nrmse /= n;
  };
  finish(report.overall);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (sums[c].n_pairs == 0) continue;
    finish(sums[c]);
    report.per_class[c] = sums[c];
  }
  return report;
}

// ---- classification -------------------------------------------------------------------

ClassificationReport classification_report(std::span<const std::size_t> predictions,
                                           std::span<const std::size_t> labels,
                                           std::vector<std::string> class_names) {
  if (predictions.size() != labels.size()) {
    throw MetricError("classification_report: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw MetricError("classification_report: empty input");
  const std::size_t k = class_names.size();
  if (k < 2) throw MetricError("classification_report: need at least two classes");

  ClassificationReport r;
  r.class_names = std::move(class_names);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k || predictions[i] >= k) {
      throw MetricError("classification_report: class index out of range at " + std::to_string(i));
    }
    ++r.confusion[labels[i]][predictions[i]];
  }
  r.total = labels.size();
  std::size_t trace = 0;
  for (std::size_t c = 0; c < k; ++c) trace += r.confusion[c][c];
  r.accuracy = static_cast<double>(trace) / r.total;

  auto ratio = [](std::size_t num, std::size_t den, const char* name, ClassMetrics& m) {
    if (den == 0) {
      m.undefined.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / den;
  };
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = r.confusion[c][c], fn = 0, fp = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fn += r.confusion[c][o];
      fp += r.confusion[o][c];
    }
    const std::size_t tn = r.total - tp - fn - fp;
    ClassMetrics m;
    m.support = tp + fn;
    m.sensitivity = ratio(tp, tp + fn, "sensitivity", m);
    m.specificity = ratio(tn, tn + fp, "specificity", m);
    m.precision = ratio(tp, tp + fp, "precision", m);
    if (m.precision + m.sensitivity > 0.0) {
      m.f1 = 2 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
    } else {
      m.undefined.emplace_back("f1");
    }
    r.per_class.push_back(std::move(m));
  }
  return r;
}

nlohmann::json ClassificationReport::to_json() const {
  nlohmann::json j;
  j["class_names"] = class_names;
  j["confusion"] = confusion;
  j["total"] = total;
  j["accuracy"] = accuracy;
  j["per_class"] = nlohmann::json::object();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    j["per_class"][class_names[c]] = {{"support", m.support},
                                      {"sensitivity", m.sensitivity},
                                      {"specificity", m.specificity},
                                      {"precision", m.precision},
                                      {"f1", m.f1},
                                      {"undefined", m.undefined}};
  }
  j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json(nullptr);
  return j;
}

std::string ClassificationReport::to_csv() const {
  std::string out = "class,support,sensitivity,specificity,precision,f1\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    out += class_names[c] + "," + std::to_string(m.support);
    for (double v : {m.sensitivity, m.specificity, m.precision, m.f1}) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  out += "all," + std::to_string(total);
  for (int i = 0; i < 4; ++i) {
    out += ',';
    append_double(out, accuracy);
  }
  out += '\n';
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("auc: length mismatch");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw MetricError("auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc: both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw MetricError("auc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (i + 1 + j) / 2.0;  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) positive_rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (positive_rank_sum - p * (p + 1) / 2) / (p * n);
}

std::vector<std::string> class_names() { return {"N", "S", "V", "F"}; }

// ---- model adapters ----------------------------------------------------------------------

GeneratorSynthesizer::GeneratorSynthesizer(GeneratorModel& g, double noise_sigma, std::size_t batch_size)
    : g_(g), noise_sigma_(noise_sigma), batch_size_(std::max<std::size_t>(batch_size, 1)) {}

std::vector<Beat> GeneratorSynthesizer::synthesize(std::span<const Beat> beats, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Beat> out;
  out.reserve(beats.size());
  for (std::size_t start = 0; start < beats.size(); start += batch_size_) {
    const std::size_t n = std::min(batch_size_, beats.size() - start);
    Tensor x({n, kBeatLength}), y({n, kNumClasses}), z({n, kBeatLength});
    for (std::size_t r = 0; r < n; ++r) {
      const Beat& beat = beats[start + r];
      if (beat.samples.size() != kBeatLength) {
        throw MetricError("beat " + std::to_string(start + r) + " has " + std::to_string(beat.samples.size()) +
                          " samples");
      }
      std::copy(beat.samples.begin(), beat.samples.end(), x.values().begin() + static_cast<long>(r * kBeatLength));
      y.at(r, index_of(beat.label)) = 1.0;
      const auto noise = make_noise(rng, noise_sigma_);
      std::copy(noise.begin(), noise.end(), z.values().begin() + static_cast<long>(r * kBeatLength));
    }
    const Tensor g = g_.forward(x, y, z, Mode::kInference);
    for (std::size_t r = 0; r < n; ++r) {
      Beat b;
      b.samples.assign(g.values().begin() + static_cast<long>(r * kBeatLength),
                       g.values().begin() + static_cast<long>((r + 1) * kBeatLength));
      b.label = beats[start + r].label;
      b.record_id = beats[start + r].record_id;
      b.r_peak_index = beats[start + r].r_peak_index;
      b.synthetic = true;
      out.push_back(std::move(b));
    }
  }
  return out;
}

DiscriminatorJudge::DiscriminatorJudge(DiscriminatorModel& d, std::size_t batch_size)
    : d_(d), batch_size_(std::max<std::size_t>(batch_size, 1)) {}

std::vector<Judgement> DiscriminatorJudge::judge(std::span<const Beat> beats) {
  std::vector<Judgement> out;
  out.reserve(beats.size());
  for (std::size_t start = 0; start < beats.size(); start += batch_size_) {
    const std::size_t n = std::min(batch_size_, beats.size() - start);
    Tensor x({n, kBeatLength}), y({n, kNumClasses});
    for (std::size_t r = 0; r < n; ++r) {
      const Beat& beat = beats[start + r];
      if (beat.samples.size() != kBeatLength) {
        throw MetricError("beat " + std::to_string(start + r) + " has " + std::to_string(beat.samples.size()) +
                          " samples");
      }
      std::copy(beat.samples.begin(), beat.samples.end(), x.values().begin() + static_cast<long>(r * kBeatLength));
      y.at(r, index_of(beat.label)) = 1.0;
    }
    const DiscriminatorOutput o = d_.forward(x, y, Mode::kInference);
    for (std::size_t r = 0; r < n; ++r) {
      Judgement j;
      for (std::size_t c = 0; c < kNumClasses; ++c) j.class_probs[c] = o.class_probs.at(r, c);
      j.realness = o.realness[r];
      out.push_back(j);
    }
  }
  return out;
}

// ---- protocols ----------------------------------------------------------------------------

SimilarityReport evaluate_generator(Synthesizer& g, std::span<const Beat> test_beats, std::uint64_t seed,
                                    const SsimOptions& options) {
  const std::vector<Beat> generated = g.synthesize(test_beats, seed);
  return similarity_report(test_beats, generated, options);
}

namespace {

ClassificationReport four_class(std::span<const Beat> beats, std::span<const Judgement> verdicts) {
  std::vector<std::size_t> predicted, truth;
  for (std::size_t i = 0; i < beats.size(); ++i) {
    const auto& p = verdicts[i].class_probs;
    predicted.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
    truth.push_back(index_of(beats[i].label));
  }
  return classification_report(predicted, truth, class_names());
}

}  // namespace

DiscriminatorEvaluation evaluate_discriminator(Judge& d, std::span<const Beat> real_beats,
                                               std::span<const Beat> generated) {
  if (real_beats.size() != generated.size()) {
    throw MetricError("evaluate_discriminator: " + std::to_string(real_beats.size()) + " real vs " +
                      std::to_string(generated.size()) + " generated beats");
  }
  const std::vector<Judgement> on_real = d.judge(real_beats);
  const std::vector<Judgement> on_fake = d.judge(generated);
  if (on_real.size() != real_beats.size() || on_fake.size() != generated.size()) {
    throw MetricError("evaluate_discriminator: judge returned the wrong number of verdicts");
  }

  DiscriminatorEvaluation e;
  e.real = four_class(real_beats, on_real);
  e.adversarial = four_class(generated, on_fake);

  // Positive class 1 = adversarial.
  std::vector<std::size_t> predicted, truth;
  std::vector<double> scores;
  std::vector<int> binary;
  for (const auto* set : {&on_real, &on_fake}) {
    const int is_fake = set == &on_fake ? 1 : 0;
    for (const Judgement& j : *set) {
      predicted.push_back(j.realness < kRealnessThreshold ? 1 : 0);
      truth.push_back(static_cast<std::size_t>(is_fake));
      scores.push_back(1.0 - j.realness);
      binary.push_back(is_fake);
    }
  }
  e.detection = classification_report(predicted, truth, {"real", "adversarial"});
  e.detection.auc = auc(scores, binary);
  return e;
}

DiscriminatorEvaluation evaluate_discriminator(Judge& d, std::span<const Beat> real_beats, Synthesizer& g,
                                               std::uint64_t seed) {
  const std::vector<Beat> generated = g.synthesize(real_beats, seed);
  return evaluate_discriminator(d, real_beats, generated);
}

std::string detection_csv(const ClassificationReport& detection) {
  if (detection.per_class.size() != 2) throw MetricError("detection_csv: expected a binary report");
  const ClassMetrics& adv = detection.per_class[1];
  std::string out = "n,accuracy,sensitivity,specificity,precision,f1,auc\n" + std::to_string(detection.total);
  for (double v : {detection.accuracy, adv.sensitivity, adv.specificity, adv.precision, adv.f1}) {
    out += ',';
    append_double(out, v);
  }
  out += ',';
  if (detection.auc) append_double(out, *detection.auc);
  out += '\n';
  return out;
}

}  // namespace ecgadv
