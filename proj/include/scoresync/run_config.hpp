#pragma once

#include <filesystem>

#include <json.hpp>

#include "scoresync/corpus.hpp"
#include "scoresync/model.hpp"
#include "scoresync/train.hpp"

namespace scoresync {

/// Everything needed to regenerate an experiment, stored as
/// {"model": {...}, "train": {...}, "corpus": {...}}. Missing sections and
/// keys take their defaults; unknown ones are rejected with ConfigError.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// IoError when the file cannot be read, ConfigError when it is not valid JSON.
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace scoresync
