#include "scoresync/run_config.hpp"

#include <fstream>

namespace scoresync {

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"corpus", corpus.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train" && key != "corpus") throw ConfigError("unknown run config section: " + key);
    if (!value.is_object()) throw ConfigError("run config section '" + key + "' must be an object");
  }
  RunConfig c;
  try {
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("corpus")) c.corpus = CorpusConfig::from_json(j["corpus"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config has a value of the wrong type: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace scoresync
