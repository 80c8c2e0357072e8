#include "scoresync/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "scoresync/random.hpp"

namespace scoresync {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'Y', 'N'};
constexpr std::uint16_t kArrayVersion = 1;
constexpr int kRenderRetries = 32;

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("truncated corpus array");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
  return std::bit_cast<T>(bits);
}

Matrix path_as_matrix(const AlignmentPath& path) {
  Matrix m(path.size(), 1);
  m.values = path.y;
  return m;
}

}  // namespace

void CorpusConfig::validate() const {
  if (pieces < 1) throw ConfigError("pieces must be >= 1");
  if (!(structural_frac >= 0.0 && structural_frac <= 1.0)) throw ConfigError("structural_frac must lie in [0,1]");
  if (min_score_frames < 16 || max_score_frames < min_score_frames) {
    throw ConfigError("score frame range must satisfy 16 <= min_score_frames <= max_score_frames");
  }
  if (polyphony < 1) throw ConfigError("polyphony must be >= 1");
  if (!(tempo.lo > 0.0 && tempo.lo <= tempo.hi) || tempo.hi / tempo.lo > 4.0) {
    throw ConfigError("tempo range must satisfy 0 < lo <= hi and hi/lo <= 4");
  }
  if (!(frame_seconds > 0.0)) throw ConfigError("frame_seconds must be > 0");
  if (!(val_frac >= 0.0 && test_frac >= 0.0 && val_frac + test_frac <= 1.0)) {
    throw ConfigError("val_frac and test_frac must be non-negative with sum <= 1");
  }
}

nlohmann::json CorpusConfig::to_json() const {
  return {{"seed", seed},
          {"pieces", pieces},
          {"structural_frac", structural_frac},
          {"min_score_frames", min_score_frames},
          {"max_score_frames", max_score_frames},
          {"polyphony", polyphony},
          {"tempo_lo", tempo.lo},
          {"tempo_hi", tempo.hi},
          {"frame_seconds", frame_seconds},
          {"val_frac", val_frac},
          {"test_frac", test_frac}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"seed",     "pieces",   "structural_frac", "min_score_frames",
                                           "max_score_frames", "polyphony", "tempo_lo", "tempo_hi",
                                           "frame_seconds", "val_frac", "test_frac"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown corpus config key: " + key);
  }
  CorpusConfig c;
  c.seed = j.value("seed", c.seed);
  c.pieces = j.value("pieces", c.pieces);
  c.structural_frac = j.value("structural_frac", c.structural_frac);
  c.min_score_frames = j.value("min_score_frames", c.min_score_frames);
  c.max_score_frames = j.value("max_score_frames", c.max_score_frames);
  c.polyphony = j.value("polyphony", c.polyphony);
  c.tempo.lo = j.value("tempo_lo", c.tempo.lo);
  c.tempo.hi = j.value("tempo_hi", c.tempo.hi);
  c.frame_seconds = j.value("frame_seconds", c.frame_seconds);
  c.val_frac = j.value("val_frac", c.val_frac);
  c.test_frac = j.value("test_frac", c.test_frac);
  c.validate();
  return c;
}

std::vector<const PerformancePair*> Corpus::split(const std::string& name) const {
  std::vector<const PerformancePair*> out;
  for (const auto& p : pairs) {
    if (p.split == name) out.push_back(&p);
  }
  return out;
}

const PerformancePair& Corpus::find(const std::string& id) const {
  for (const auto& p : pairs) {
    if (p.id == id) return p;
  }
  throw std::out_of_range("no pair with id " + id);
}

PerformancePair make_pair(const std::string& id, std::uint64_t seed, bool structural, const CorpusConfig& config) {
  for (int attempt = 0; attempt < kRenderRetries; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    const int q = uniform_int(rng, config.min_score_frames, config.max_score_frames);
    const auto score_events = generate_piece(rng(), q, config.polyphony);
    const Rendering r = render_performance(score_events, rng(), config.tempo, structural);
    if (r.perf_frames < q) continue;

    PerformancePair pair;
    pair.id = id;
    pair.score_features = chroma_features(score_events, q);
    pair.perf_features = chroma_features(r.perf_events, r.perf_frames);
    pair.similarity = cross_similarity(pair.perf_features, pair.score_features);
    pair.gt_path = r.gt_path;
    pair.structural = structural;
    pair.frame_seconds = config.frame_seconds;
    pair.plan = r.plan.label();
    return pair;
  }
  throw ConfigError("could not render a performance at least as long as its score for " + id +
                    "; raise tempo_lo");
}

Corpus build_corpus(const CorpusConfig& config) {
  config.validate();
  const int n = config.pieces;
  const int n_struct = static_cast<int>(std::llround(n * config.structural_frac));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(config.seed, 0xC0FFEE));
  for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng() % static_cast<std::uint64_t>(i + 1)]);

  std::vector<bool> structural(static_cast<std::size_t>(n), false);
  std::vector<std::string> split(static_cast<std::size_t>(n), "train");
  const int struct_train = n_struct - n_struct / 2;
  for (int k = 0; k < n_struct; ++k) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    structural[idx] = true;
    split[idx] = k < struct_train ? "train" : "test";
  }
  const int n_plain = n - n_struct;
  const int n_test = static_cast<int>(std::llround(n_plain * config.test_frac));
  const int n_val = static_cast<int>(std::llround(n_plain * config.val_frac));
  for (int k = 0; k < n_plain; ++k) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(n_struct + k)]);
    split[idx] = k < n_test ? "test" : (k < n_test + n_val ? "val" : "train");
  }

  Corpus corpus;
  corpus.config = config;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "pair-%04d", i);
    const auto idx = static_cast<std::size_t>(i);
    PerformancePair pair = make_pair(id, mix_seed(config.seed, static_cast<std::uint64_t>(i) + 1), structural[idx], config);
    pair.split = split[idx];
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void write_array(std::ostream& os, const Matrix& m, std::uint16_t ndim) {
  os.write(kMagic, 4);
  put_le<std::uint16_t>(os, kArrayVersion);
  put_le<std::uint16_t>(os, ndim);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ndim == 1 ? 1 : m.cols));
  for (double v : m.values) put_le<double>(os, v);
}

Matrix read_array(std::istream& is, std::uint16_t* ndim_out) {
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw IoError("bad array magic, expected SSYN");
  const auto version = get_le<std::uint16_t>(is);
  if (version != kArrayVersion) throw IoError("unsupported array version " + std::to_string(version));
  const auto ndim = get_le<std::uint16_t>(is);
  if (ndim != 1 && ndim != 2) throw IoError("unsupported array rank " + std::to_string(ndim));
  const auto rows = get_le<std::uint32_t>(is);
  const auto cols = get_le<std::uint32_t>(is);
  Matrix m(rows, cols);
  for (double& v : m.values) v = get_le<double>(is);
  if (ndim_out) *ndim_out = ndim;
  return m;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "scoresync-corpus";
  manifest["version"] = 1;
  manifest["config"] = corpus.config.to_json();
  manifest["pairs"] = nlohmann::json::array();
  for (const auto& pair : corpus.pairs) {
    const std::string file = pair.id + ".bin";
    std::ofstream os(dir / file, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / file).string());
    nlohmann::json offsets;
    offsets["score_features"] = static_cast<std::uint64_t>(os.tellp());
    write_array(os, pair.score_features, 2);
    offsets["perf_features"] = static_cast<std::uint64_t>(os.tellp());
    write_array(os, pair.perf_features, 2);
    offsets["similarity"] = static_cast<std::uint64_t>(os.tellp());
    write_array(os, pair.similarity, 2);
    offsets["gt_path"] = static_cast<std::uint64_t>(os.tellp());
    write_array(os, path_as_matrix(pair.gt_path), 1);
    if (!os) throw IoError("write failed: " + (dir / file).string());
    manifest["pairs"].push_back({{"id", pair.id},
                                 {"p", pair.p()},
                                 {"q", pair.q()},
                                 {"structural", pair.structural},
                                 {"frame_seconds", pair.frame_seconds},
                                 {"split", pair.split},
                                 {"plan", pair.plan},
                                 {"file", file},
                                 {"offsets", offsets}});
  }
  std::ofstream ms(dir / "manifest.json", std::ios::trunc);
  if (!ms) throw IoError("cannot write manifest in " + dir.string());
  ms << manifest.dump(2) << '\n';
  if (!ms) throw IoError("manifest write failed");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  Corpus corpus;
  corpus.config = CorpusConfig::from_json(manifest.at("config"));
  for (const auto& entry : manifest.at("pairs")) {
    PerformancePair pair;
    pair.id = entry.at("id").get<std::string>();
    pair.structural = entry.at("structural").get<bool>();
    pair.frame_seconds = entry.at("frame_seconds").get<double>();
    pair.split = entry.at("split").get<std::string>();
    pair.plan = entry.value("plan", "");
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const auto& offsets = entry.at("offsets");
    auto read_at = [&](const char* key) {
      is.seekg(static_cast<std::streamoff>(offsets.at(key).get<std::uint64_t>()));
      return read_array(is);
    };
    pair.score_features = read_at("score_features");
    pair.perf_features = read_at("perf_features");
    pair.similarity = read_at("similarity");
    pair.gt_path.y = read_at("gt_path").values;
    if (pair.p() != entry.at("p").get<std::size_t>() || pair.q() != entry.at("q").get<std::size_t>() ||
        pair.similarity.rows != pair.p() || pair.similarity.cols != pair.q() || pair.gt_path.size() != pair.p()) {
      throw IoError("pair " + pair.id + " does not match its manifest extents");
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

}  // namespace scoresync
