#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "scoresync/corpus.hpp"
#include "scoresync/errors.hpp"
#include "scoresync/softdtw.hpp"
#include "scoresync/train.hpp"

using namespace scoresync;
namespace fs = std::filesystem;

namespace {

CorpusConfig small_config(std::uint64_t seed = 7) {
  CorpusConfig c;
  c.seed = seed;
  c.pieces = 10;
  c.structural_frac = 0.2;
  return c;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(CorpusConfig, ValidateRejectsBadValues) {
  auto bad = [](auto mutate) {
    CorpusConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(CorpusConfig{}.validate());
  EXPECT_THROW(bad([](CorpusConfig& c) { c.pieces = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](CorpusConfig& c) { c.structural_frac = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](CorpusConfig& c) { c.min_score_frames = 12; }).validate(), ConfigError);
  EXPECT_THROW(bad([](CorpusConfig& c) { c.tempo = {1.0, 5.0}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](CorpusConfig& c) { c.val_frac = 0.7; c.test_frac = 0.5; }).validate(), ConfigError);
}

TEST(CorpusConfig, JsonRoundTripAndUnknownKeys) {
  CorpusConfig c = small_config(99);
  c.tempo = {0.8, 1.3};
  c.polyphony = 3;
  const auto back = CorpusConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto j = c.to_json();
  j["colour"] = "blue";
  EXPECT_THROW(CorpusConfig::from_json(j), ConfigError);
}

TEST(Corpus, StructuralCountFollowsFraction) {
  const Corpus corpus = build_corpus(small_config());
  ASSERT_EQ(corpus.pairs.size(), 10u);
  int structural = 0;
  for (const auto& p : corpus.pairs) structural += p.structural;
  EXPECT_EQ(structural, 2);
}

TEST(Corpus, SplitsAreDisjointAndStructuralPairsAreShared) {
  CorpusConfig c = small_config(3);
  c.pieces = 40;
  c.structural_frac = 0.25;
  const Corpus corpus = build_corpus(c);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const char* name : {"train", "val", "test"}) {
    for (const auto* p : corpus.split(name)) {
      EXPECT_TRUE(seen.insert(p->id).second) << p->id;
      ++total;
    }
  }
  EXPECT_EQ(total, corpus.pairs.size());
  int struct_train = 0, struct_test = 0;
  for (const auto& p : corpus.pairs) {
    if (!p.structural) continue;
    EXPECT_NE(p.split, "val");
    (p.split == "train" ? struct_train : struct_test)++;
  }
  EXPECT_EQ(struct_train, 5);
  EXPECT_EQ(struct_test, 5);
  EXPECT_EQ(corpus.split("test").size(), 5u + 6u);  // round(30 * 0.2)
  EXPECT_EQ(corpus.split("val").size(), 3u);
}

TEST(Corpus, IdsAndFind) {
  const Corpus corpus = build_corpus(small_config());
  EXPECT_EQ(corpus.pairs.front().id, "pair-0000");
  EXPECT_EQ(corpus.find("pair-0003").id, "pair-0003");
  EXPECT_THROW(corpus.find("pair-9999"), std::out_of_range);
}

TEST(Corpus, BuildIsDeterministicAndSeedSensitive) {
  const Corpus a = build_corpus(small_config(5)), b = build_corpus(small_config(5)), c = build_corpus(small_config(6));
  ASSERT_EQ(a.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    EXPECT_EQ(a.pairs[i].similarity, b.pairs[i].similarity);
    EXPECT_EQ(a.pairs[i].gt_path, b.pairs[i].gt_path);
    EXPECT_EQ(a.pairs[i].split, b.pairs[i].split);
  }
  EXPECT_NE(a.pairs[0].similarity, c.pairs[0].similarity);
}

TEST(Corpus, PairInvariants) {
  CorpusConfig c = small_config(8);
  c.pieces = 30;
  c.structural_frac = 0.5;
  for (const auto& pair : build_corpus(c).pairs) {
    EXPECT_GE(pair.p(), pair.q()) << pair.id;
    EXPECT_EQ(pair.similarity.rows, pair.p());
    EXPECT_EQ(pair.similarity.cols, pair.q());
    EXPECT_EQ(pair.gt_path.size(), pair.p());
    EXPECT_GE(pair.q(), 24u);
    EXPECT_LE(pair.q(), 40u);
    bool decreases = false;
    for (std::size_t i = 0; i < pair.p(); ++i) {
      EXPECT_GE(pair.gt_path.y[i], 0.0);
      EXPECT_LE(pair.gt_path.y[i], pair.q() - 1.0);
      if (i > 0) decreases |= pair.gt_path.y[i] < pair.gt_path.y[i - 1];
    }
    EXPECT_EQ(decreases, pair.structural) << pair.id << " " << pair.plan;
    EXPECT_NO_THROW(resize_and_pad(pair.similarity, 64));
  }
}

TEST(Corpus, WriteReadRoundTripIsBitExact) {
  const fs::path dir = fs::temp_directory_path() / "scoresync-corpus-roundtrip";
  fs::remove_all(dir);
  const Corpus corpus = build_corpus(small_config(12));
  write_corpus(corpus, dir);
  const Corpus back = read_corpus(dir);
  ASSERT_EQ(back.pairs.size(), corpus.pairs.size());
  EXPECT_EQ(back.config.to_json(), corpus.config.to_json());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    const auto &a = corpus.pairs[i], &b = back.pairs[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.score_features, b.score_features);
    EXPECT_EQ(a.perf_features, b.perf_features);
    EXPECT_EQ(a.similarity, b.similarity);
    EXPECT_EQ(a.gt_path, b.gt_path);
    EXPECT_EQ(a.structural, b.structural);
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.plan, b.plan);
    EXPECT_EQ(a.frame_seconds, b.frame_seconds);
  }

  const fs::path again = dir.string() + "-again";
  fs::remove_all(again);
  write_corpus(back, again);
  for (const auto& entry : fs::directory_iterator(dir)) {
    EXPECT_EQ(file_bytes(entry.path()), file_bytes(again / entry.path().filename())) << entry.path();
  }
}

TEST(Corpus, ReadReportsMissingOrMalformedManifest) {
  const fs::path dir = fs::temp_directory_path() / "scoresync-corpus-missing";
  fs::remove_all(dir);
  EXPECT_THROW(read_corpus(dir), IoError);
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(read_corpus(dir), IoError);
}

TEST(ArrayFraming, HeaderLayout) {
  Matrix m(2, 3);
  m.values = {1, 2, 3, 4, 5, 6};
  std::ostringstream os;
  write_array(os, m, 2);
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 4u + 2 + 2 + 8 + 6 * 8);
  EXPECT_EQ(bytes.substr(0, 4), "SSYN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);  // ndim, little endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);  // rows
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3u);  // cols
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 16, 8);
  EXPECT_EQ(first, 1.0);

  std::istringstream is(bytes);
  std::uint16_t ndim = 0;
  EXPECT_EQ(read_array(is, &ndim), m);
  EXPECT_EQ(ndim, 2u);
}

TEST(ArrayFraming, VectorsUseRankOne) {
  Matrix v(4, 1);
  v.values = {0.5, -0.25, 1e-300, 7};
  std::ostringstream os;
  write_array(os, v, 1);
  std::istringstream is(os.str());
  std::uint16_t ndim = 0;
  EXPECT_EQ(read_array(is, &ndim), v);
  EXPECT_EQ(ndim, 1u);
}

TEST(ArrayFraming, RejectsBadMagicVersionAndTruncation) {
  std::ostringstream os;
  write_array(os, Matrix(2, 2, 1.0), 2);
  const std::string good = os.str();

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_array(a), IoError);

  std::string bad_version = good;
  bad_version[4] = 9;
  std::istringstream b(bad_version);
  EXPECT_THROW(read_array(b), IoError);

  std::string bad_rank = good;
  bad_rank[6] = 3;
  std::istringstream c(bad_rank);
  EXPECT_THROW(read_array(c), IoError);

  std::istringstream d(good.substr(0, good.size() - 3));
  EXPECT_THROW(read_array(d), IoError);
}

TEST(Corpus, ClassicDtwStrugglesOnStructuralPairs) {
  CorpusConfig c = small_config(21);
  c.pieces = 40;
  c.structural_frac = 0.5;
  const Corpus corpus = build_corpus(c);
  double acc[2] = {0, 0};
  int count[2] = {0, 0};
  for (const auto& pair : corpus.pairs) {
    const auto dtw = dtw_classic(pair.similarity);
    acc[pair.structural] += alignment_accuracy(dtw.path, pair.gt_path, pair.frame_seconds, {0.1})[0];
    ++count[pair.structural];
  }
  EXPECT_LT(acc[1] / count[1], acc[0] / count[0]);
}
