#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "scoresync/corpus.hpp"
#include "scoresync/errors.hpp"
#include "scoresync/grad_check.hpp"
#include "scoresync/model.hpp"
#include "scoresync/train.hpp"

using namespace scoresync;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::mt19937_64& rng, const Shape& shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& e : v) e = uniform_real(rng, -1.0, 1.0);
  return Tensor::from(shape, v, true);
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.L = 16;
  c.enc_channels = {4, 4, 8, 8};
  c.heads = 2;
  c.spatial_extent_k = 3;
  c.fc_hidden = 16;
  c.dropout = 0.0;
  return c;
}

PerformancePair sample_pair(std::uint64_t seed, bool structural) {
  CorpusConfig c;
  return make_pair("sample", seed, structural, c);
}

}  // namespace

// --- attention layer ----------------------------------------------------------

TEST(Sasa, TwoPixelHandExample) {
  SasaWeights w;
  w.wq = Tensor::from({1, 1, 1}, {1.0});
  w.wk = Tensor::from({1, 1, 1}, {1.0});
  w.wv = Tensor::from({1, 1, 1}, {1.0});
  w.col_offsets = Tensor::zeros({3, 1});
  const Tensor y = sasa_layer(Tensor::from({1, 1, 1, 2}, {1.0, 2.0}), w, 1, 3);
  const double e = std::exp(1.0);
  EXPECT_NEAR(y.data()[0], (1 + 2 * e) / (1 + e), 1e-14);
  EXPECT_NEAR(y.data()[1], (1 + 2 * e * e) / (1 + e * e), 1e-14);
}

TEST(Sasa, OffsetsShiftAttention) {
  SasaWeights w;
  w.wq = Tensor::from({1, 1, 1}, {1.0});
  w.wk = Tensor::from({1, 1, 1}, {0.0});
  w.wv = Tensor::from({1, 1, 1}, {1.0});
  // Column offset table indexed by b - j + k/2: favour the right neighbour.
  w.col_offsets = Tensor::from({3, 1}, {0.0, 0.0, 50.0});
  const Tensor y = sasa_layer(Tensor::from({1, 1, 1, 3}, {1.0, 2.0, 3.0}), w, 1, 3);
  EXPECT_NEAR(y.data()[0], 2.0, 1e-12);
  EXPECT_NEAR(y.data()[1], 3.0, 1e-12);
  EXPECT_NEAR(y.data()[2], 2.5, 1e-12);  // no right neighbour
}

TEST(Sasa, PaddedNeighboursAreMasked) {
  // A constant image stays constant at the borders only when outside
  // positions are excluded, whatever the weights.
  std::mt19937_64 rng(4);
  SasaWeights w;
  w.wq = random_tensor(rng, {2, 2, 2});
  w.wk = random_tensor(rng, {2, 2, 2});
  w.wv = Tensor::from({2, 2, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  w.row_offsets = random_tensor(rng, {5, 1});
  w.col_offsets = random_tensor(rng, {5, 1});
  const Tensor x = Tensor::from({1, 4, 3, 3}, std::vector<double>(36, 0.7));
  const Tensor y = sasa_layer(x, w, 2, 5);
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-14);
}

TEST(Sasa, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const std::size_t heads = 2, dh = 3, k = 3;
  Tensor x = random_tensor(rng, {2, heads * dh, 3, 4});
  SasaWeights w;
  w.wq = random_tensor(rng, {heads, dh, dh});
  w.wk = random_tensor(rng, {heads, dh, dh});
  w.wv = random_tensor(rng, {heads, dh, dh});
  w.row_offsets = random_tensor(rng, {k, dh / 2});
  w.col_offsets = random_tensor(rng, {k, dh - dh / 2});
  const Tensor probe = Tensor::from({1, 2 * heads * dh * 12}, [&] {
    std::vector<double> v(2 * heads * dh * 12);
    for (double& e : v) e = uniform_real(rng, -1.0, 1.0);
    return v;
  }());
  auto f = [&] {
    const Tensor y = reshape(sasa_layer(x, w, heads, k), {1, probe.numel()});
    return sum(dense(probe, reshape(y, {probe.numel(), 1}), Tensor::zeros({1})));
  };
  const auto r = grad_check(f, {x, w.wq, w.wk, w.wv, w.row_offsets, w.col_offsets});
  EXPECT_LE(r.max_rel_error, 1e-5) << r.worst_tensor << ":" << r.worst_index;
}

TEST(Sasa, ShapeErrors) {
  SasaWeights w;
  w.wq = w.wk = w.wv = Tensor::zeros({1, 2, 2});
  w.row_offsets = Tensor::zeros({3, 1});
  w.col_offsets = Tensor::zeros({3, 1});
  EXPECT_THROW(sasa_layer(Tensor::zeros({1, 3, 2, 2}), w, 1, 3), DimensionError);
  EXPECT_THROW(sasa_layer(Tensor::zeros({1, 2, 2, 2}), w, 1, 5), DimensionError);
}

// --- configuration ------------------------------------------------------------

TEST(ModelConfig, ValidateRejectsBadShapes) {
  auto with = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_THROW(with([](ModelConfig& c) { c.L = 40; }).validate(), ConfigError);
  EXPECT_THROW(with([](ModelConfig& c) { c.heads = 3; }).validate(), ConfigError);
  EXPECT_THROW(with([](ModelConfig& c) { c.spatial_extent_k = 4; }).validate(), ConfigError);
  EXPECT_THROW(with([](ModelConfig& c) { c.enc_channels = {8, 8, 8}; }).validate(), ConfigError);
  EXPECT_THROW(with([](ModelConfig& c) { c.dropout = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(CaModel(with([](ModelConfig& c) { c.L = 8; })), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndHash) {
  ModelConfig c = tiny_config();
  c.decoder_kind = DecoderKind::conv;
  c.head_kind = HeadKind::classification;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  ModelConfig d = c;
  d.init_seed = 2;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(CaModel, ParameterCountIsAFunctionOfConfig) {
  CaModel a(tiny_config());
  ModelConfig other_seed = tiny_config();
  other_seed.init_seed = 77;
  CaModel b(other_seed);
  EXPECT_EQ(a.parameters().parameter_count(), b.parameters().parameter_count());
  ModelConfig wider = tiny_config();
  wider.fc_hidden = 32;
  EXPECT_GT(CaModel(wider).parameters().parameter_count(), a.parameters().parameter_count());
}

// --- forward pass -------------------------------------------------------------

TEST(CaModel, ShapesAndRange) {
  std::mt19937_64 rng(1);
  for (DecoderKind kind : {DecoderKind::sasa, DecoderKind::conv}) {
    ModelConfig c = tiny_config();
    c.L = 32;
    c.decoder_kind = kind;
    CaModel model(c);
    const Tensor x = random_tensor(rng, {3, 1, 32, 32});
    const Encoded enc = model.encode(x, Mode::train);
    EXPECT_EQ(enc.activations.shape(), (Shape{3, 8, 2, 2}));
    EXPECT_EQ(enc.masks.size(), 4u);
    const PathPrediction pred = model.decode(enc, Mode::train, rng);
    EXPECT_EQ(pred.y_hat.shape(), (Shape{3, 32}));
    EXPECT_FALSE(pred.has_logits);
    for (double v : pred.y_hat.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 31.0);
    }
  }
}

TEST(CaModel, ClassificationHeadEmitsLogitsPerFrame) {
  ModelConfig c = tiny_config();
  c.head_kind = HeadKind::classification;
  CaModel model(c);
  std::mt19937_64 rng(2);
  const PathPrediction pred = model.forward(random_tensor(rng, {2, 1, 16, 16}), Mode::eval, rng);
  ASSERT_TRUE(pred.has_logits);
  EXPECT_EQ(pred.logits.shape(), (Shape{32, 16}));
  EXPECT_EQ(pred.y_hat.shape(), (Shape{2, 16}));
  for (double v : pred.y_hat.data()) EXPECT_EQ(v, std::round(v));
}

TEST(CaModel, ZeroInputGivesZeroActivations) {
  CaModel model(tiny_config());
  for (Mode mode : {Mode::train, Mode::eval}) {
    const Encoded enc = model.encode(Tensor::zeros({2, 1, 16, 16}), mode);
    for (double v : enc.activations.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(CaModel, ZeroOutputWeightsPredictGridMidpoint) {
  CaModel model(tiny_config());
  auto& w = model.parameters().get("head.fc2.weight");
  std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
  const PerformancePair pair = sample_pair(3, false);
  const auto meta = resize_and_pad(pair.similarity, 16).meta;
  for (double v : predict_grid(resize_and_pad(pair.similarity, 16).matrix, model)) EXPECT_EQ(v, 7.5);
  const AlignmentPath path = predict_alignment(pair, model);
  ASSERT_EQ(path.size(), pair.p());
  for (double y : path.y) EXPECT_DOUBLE_EQ(y, std::min(7.5 / meta.ratio, pair.q() - 1.0));
}

TEST(CaModel, EvalIsDeterministic) {
  CaModel model(tiny_config());
  const PerformancePair pair = sample_pair(4, true);
  const AlignmentPath a = predict_alignment(pair, model), b = predict_alignment(pair, model);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), pair.p());
  for (double y : a.y) {
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, pair.q() - 1.0);
  }
}

TEST(CaModel, InitSeedControlsWeights) {
  CaModel a(tiny_config()), b(tiny_config());
  ModelConfig c = tiny_config();
  c.init_seed = 9;
  CaModel other(c);
  EXPECT_EQ(a.parameters().snapshot(), b.parameters().snapshot());
  EXPECT_NE(a.parameters().snapshot(), other.parameters().snapshot());
}

// --- checkpoints ---------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  const fs::path dir = fs::temp_directory_path() / "scoresync-model-ckpt";
  fs::remove_all(dir);
  ModelConfig c = tiny_config();
  c.dropout = 0.3;
  CaModel model(c);
  // Move the batchnorm buffers away from their initial values.
  std::mt19937_64 rng(6);
  model.forward(random_tensor(rng, {2, 1, 16, 16}), Mode::train, rng);

  model.save(dir / "nested" / "model", {{"note", "kept"}});
  ASSERT_TRUE(fs::exists(dir / "nested" / "model.bin"));
  std::ifstream side(dir / "nested" / "model.json");
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j.at("note"), "kept");
  EXPECT_EQ(j.at("config_hash"), c.hash());

  CaModel back = CaModel::load(dir / "nested" / "model");
  EXPECT_EQ(back.config().to_json(), c.to_json());
  EXPECT_EQ(back.parameters().snapshot(), model.parameters().snapshot());
  const PerformancePair pair = sample_pair(8, false);
  EXPECT_EQ(predict_alignment(pair, back), predict_alignment(pair, model));
}

TEST(Checkpoint, RejectsHashMismatchAndMissingFiles) {
  const fs::path dir = fs::temp_directory_path() / "scoresync-model-hash";
  fs::remove_all(dir);
  CaModel(tiny_config()).save(dir / "m");
  nlohmann::json j;
  {
    std::ifstream is(dir / "m.json");
    j = nlohmann::json::parse(is);
  }
  j["model_config"]["fc_hidden"] = 32;
  std::ofstream(dir / "m.json") << j.dump();
  EXPECT_THROW(CaModel::load(dir / "m"), ConfigError);
  EXPECT_THROW(CaModel::load(dir / "absent"), IoError);
}

// --- capacity -----------------------------------------------------------------

TEST(CaModel, OverfitsASinglePair) {
  ModelConfig c = tiny_config();
  c.L = 64;
  c.enc_channels = {8, 8, 16, 16};
  c.fc_hidden = 64;
  CaModel model(c);
  const PerformancePair pair = sample_pair(10, true);
  TrainConfig t;
  t.epochs = 600;
  t.batch_size = 1;
  t.learning_rate = 1e-2;
  const FitResult fit_result = fit(model, {&pair}, {}, t);
  ASSERT_EQ(fit_result.curve.size(), 600u);
  EXPECT_LT(fit_result.best_loss, 0.1 * fit_result.curve[9].train_loss);
  const double within_two = alignment_accuracy(predict_alignment(pair, model), pair.gt_path, 1.0, {2.0})[0];
  EXPECT_GE(within_two, 95.0);
}
