#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scoresync/corpus.hpp"
#include "scoresync/ops.hpp"
#include "scoresync/params.hpp"

namespace scoresync {

enum class DecoderKind { sasa, conv };
enum class HeadKind { regression, classification };

struct ModelConfig {
  std::size_t L = 64;
  std::vector<std::size_t> enc_channels{16, 32, 64, 64};
  std::size_t heads = 4;
  std::size_t spatial_extent_k = 7;
  std::size_t sasa_layers = 2;
  DecoderKind decoder_kind = DecoderKind::sasa;
  HeadKind head_kind = HeadKind::regression;
  double dropout = 0.4;
  std::size_t fc_hidden = 512;
  double bn_momentum = 0.1;
  std::uint64_t init_seed = 1;

  /// Throws ConfigError when L is not a multiple of 16, the attention
  /// channels do not split evenly into heads, or k is even.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// FNV-1a over the canonical JSON form, as 16 hex digits.
  std::string hash() const;
};

/// Weights of one stand-alone self-attention layer. Each head owns a
/// dh x dh query/key/value map over its channel group; the relative
/// position tables are shared by the heads. Row offsets cover the first
/// dh/2 query dimensions, column offsets the rest.
struct SasaWeights {
  Tensor wq;           // [heads, dh, dh]
  Tensor wk;           // [heads, dh, dh]
  Tensor wv;           // [heads, dh, dh]
  Tensor row_offsets;  // [k, dh/2], empty handle when dh/2 == 0
  Tensor col_offsets;  // [k, dh - dh/2]
};

/// y_ij = sum over the k x k block around (i,j) of
/// softmax_ab(q_ij . k_ab + q_ij . r_{a-i,b-j}) v_ab, per head. Positions
/// outside the image are excluded from the softmax.
Tensor sasa_layer(const Tensor& x, const SasaWeights& weights, std::size_t heads, std::size_t k);

struct PathPrediction {
  Tensor y_hat;   // [N, L] score positions on the grid, in [0, L-1]
  Tensor logits;  // [N*L, L], classification head only
  bool has_logits = false;
};

struct Encoded {
  Tensor activations;  // [N, C, L/16, L/16]
  std::vector<IndexMask> masks;
};

/// Convolutional encoder, max-unpool + attention decoder, dense head.
class CaModel {
 public:
  explicit CaModel(ModelConfig config);
  CaModel(const CaModel&) = delete;
  CaModel& operator=(const CaModel&) = delete;
  CaModel(CaModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Four blocks of conv 3x3 -> batchnorm -> relu -> 2x2 max pool.
  Encoded encode(const Tensor& input, Mode mode);
  /// Unpool with the last mask, attention (or conv) layers, dense head.
  PathPrediction decode(const Encoded& encoded, Mode mode, std::mt19937_64& rng);
  PathPrediction forward(const Tensor& input, Mode mode, std::mt19937_64& rng);

  /// Writes `<stem>.bin` and `<stem>.json`. `extra` is merged into the sidecar.
  void save(const std::filesystem::path& stem, const nlohmann::json& extra = {}) const;
  /// Loads a checkpoint, rejecting a sidecar whose config hash does not match.
  static CaModel load(const std::filesystem::path& stem);

 private:
  struct EncoderBlock {
    Tensor conv_w, conv_b, gamma, beta;
    BatchNormStats stats;
  };
  struct DecoderLayer {
    SasaWeights sasa;
    Tensor conv_w, conv_b;
  };

  ModelConfig config_;
  ParameterSet params_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderLayer> decoder_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// Input tensor [1,1,L,L] for a resized similarity matrix.
Tensor grid_input(const Matrix& resized);

/// resize -> encode -> decode -> rescale to the pair's (p, q) frames.
AlignmentPath predict_alignment(const PerformancePair& pair, CaModel& model);

/// Grid-space prediction for one resized matrix (eval mode).
std::vector<double> predict_grid(const Matrix& resized, CaModel& model);

}  // namespace scoresync
