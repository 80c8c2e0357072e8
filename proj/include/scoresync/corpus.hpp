#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scoresync/matrix.hpp"
#include "scoresync/synth.hpp"

namespace scoresync {

/// Hop of 512 samples at 22050 Hz.
inline constexpr double kDefaultFrameSeconds = 512.0 / 22050.0;

struct PerformancePair {
  std::string id;
  Matrix score_features;  // q x 12
  Matrix perf_features;   // p x 12
  Matrix similarity;      // p x q
  AlignmentPath gt_path;  // length p
  bool structural = false;
  double frame_seconds = kDefaultFrameSeconds;
  std::string split;  // "train", "val" or "test"
  std::string plan;   // segment plan label

  std::size_t p() const { return perf_features.rows; }
  std::size_t q() const { return score_features.rows; }
};

struct CorpusConfig {
  std::uint64_t seed = 0;
  int pieces = 10;
  double structural_frac = 0.2;
  int min_score_frames = 24;
  int max_score_frames = 40;
  int polyphony = 2;
  TempoRange tempo{1.0, 1.5};
  double frame_seconds = kDefaultFrameSeconds;
  /// Fractions of the non-structural pairs held out; structural pairs are
  /// split half train, half test.
  double val_frac = 0.1;
  double test_frac = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static CorpusConfig from_json(const nlohmann::json& j);
};

struct Corpus {
  CorpusConfig config;
  std::vector<PerformancePair> pairs;

  std::vector<const PerformancePair*> split(const std::string& name) const;
  const PerformancePair& find(const std::string& id) const;
};

/// One pair from a per-pair seed. Re-renders (bounded) until the score fits
/// the performance length, so resize_and_pad accepts it.
PerformancePair make_pair(const std::string& id, std::uint64_t seed, bool structural, const CorpusConfig& config);

/// Pure function of the config: identical configs give bit-identical corpora.
Corpus build_corpus(const CorpusConfig& config);

/// manifest.json plus one binary file per pair.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Array framing used inside pair files: "SSYN", u16 version, u16 ndim,
/// u32 extents[2], then little-endian f64 values in row-major order.
void write_array(std::ostream& os, const Matrix& m, std::uint16_t ndim);
Matrix read_array(std::istream& is, std::uint16_t* ndim = nullptr);

}  // namespace scoresync
