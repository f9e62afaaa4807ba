#pragma once

// Seeded synthetic 4-class beat set. Each class is a fixed template of
// Gaussian bumps and a sine term; beats jitter amplitude, width and position
// slightly, add white noise, and are min-max normalized like real beats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ecgadv/beat.hpp"

namespace ecgadv::toy {

struct ToyOptions {
  std::size_t per_class = 500;
  std::uint64_t seed = 2024;
  double noise = 0.01;   // white-noise sigma before normalization
  double jitter = 0.08;  // relative amplitude/width jitter
  double shift = 3.0;    // max position shift in samples
};

std::vector<double> toy_template(Label label);
/// Interleaved N,S,V,F,N,S,... so any prefix is roughly balanced.
std::vector<Beat> make_toy_beats(const ToyOptions& options = {});

/// Writes <id>.sig.csv / <id>.ann.csv pairs: toy beats laid end to end, one
/// annotation per beat at its R peak, symbols cycling N, A, V, F (record i
/// starts at class i mod 4).
void write_toy_records(const std::filesystem::path& dir, const std::vector<std::string>& ids,
                       std::size_t beats_per_record, std::uint64_t seed);

}  // namespace ecgadv::toy
