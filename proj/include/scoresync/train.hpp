#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scoresync/corpus.hpp"
#include "scoresync/model.hpp"
#include "scoresync/softdtw.hpp"

namespace scoresync {

enum class OptimizerKind { sgd_momentum, adam };
enum class LossKind { custom, ce };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 2;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // sgd_momentum only
  LrSchedule schedule = LrSchedule::cosine;  // cosine anneals to 0 over all steps
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::custom;
  double lambda = 1.0;  // soft-DTW smoothing on [0,1]-normalized indices
  LocalCost cost = LocalCost::abs_diff;

  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static TrainConfig from_json(const nlohmann::json& j);
  SoftDtwParams softdtw() const { return {lambda, cost}; }
};

/// Soft-DTW divergence between each row of `y_hat` [N,L] and its target,
/// both divided by `normalizer`, averaged over the batch. Backward uses the
/// analytic divergence gradient.
Tensor divergence_loss(const Tensor& y_hat, const std::vector<std::vector<double>>& targets,
                       const SoftDtwParams& params, double normalizer);

/// custom: divergence on [0,1]-normalized grid indices. ce: mean per-frame
/// cross-entropy of the score-bin logits against rounded target indices.
Tensor loss(const PathPrediction& pred, const std::vector<std::vector<double>>& gt_grid, LossKind kind,
            const SoftDtwParams& params, std::size_t L);

/// A pair prepared for the network: resized input and the grid-space target.
struct GridSample {
  std::string id;
  Matrix input;
  std::vector<double> target;
  ResizeMeta meta;
};

GridSample prepare_sample(const PerformancePair& pair, std::size_t L);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> curve;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_loss = 0.0;
};

/// Mini-batch training; the parameters with the lowest validation loss (train
/// loss when `val` is empty) are restored at the end. Throws NumericError
/// naming the batch when the loss becomes non-finite.
FitResult fit(CaModel& model, const std::vector<const PerformancePair*>& train,
              const std::vector<const PerformancePair*>& val, const TrainConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Percentage of frames whose |pred - gt| * frame_seconds is within each margin.
std::vector<double> alignment_accuracy(const AlignmentPath& pred, const AlignmentPath& gt, double frame_seconds,
                                       const std::vector<double>& margins);

inline const std::vector<double> kDefaultMargins{0.05, 0.1, 0.2};

struct PairEvaluation {
  std::string id;
  bool structural = false;
  std::string plan;
  std::vector<double> model;
  std::vector<double> baseline;
  AlignmentPath predicted;
  AlignmentPath baseline_path;
};

struct EvalReport {
  std::vector<double> margins;
  std::vector<double> overall;
  std::vector<double> baseline_overall;
  std::optional<std::vector<double>> structural;  // absent when the split has no structural pair
  std::optional<std::vector<double>> baseline_structural;
  std::size_t structural_pairs = 0;
  std::vector<PairEvaluation> pairs;
  std::string fingerprint;

  nlohmann::json to_json(bool include_paths = false) const;
};

/// Runs the model and classic DTW on every pair and averages per-pair accuracies.
EvalReport evaluate(const std::vector<const PerformancePair*>& split, CaModel& model,
                    const std::vector<double>& margins = kDefaultMargins);

}  // namespace scoresync
