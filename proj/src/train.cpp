#include "scoresync/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "scoresync/random.hpp"

namespace scoresync {

namespace {

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_momentum"; }
const char* to_string(LossKind k) { return k == LossKind::custom ? "custom" : "ce"; }
const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }
const char* to_string(LocalCost c) { return c == LocalCost::abs_diff ? "abs_diff" : "squared_diff"; }

class Optimizer {
 public:
  Optimizer(ParameterSet& params, const TrainConfig& config, std::size_t total_steps)
      : params_(params), config_(config), total_steps_(std::max<std::size_t>(1, total_steps)) {
    for (const auto& p : params.params()) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step() {
    double lr = config_.learning_rate;
    if (config_.schedule == LrSchedule::cosine) {
      const double progress = static_cast<double>(t_) / static_cast<double>(total_steps_);
      lr *= 0.5 * (1.0 + std::cos(M_PI * progress));
    }
    ++t_;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(beta1, t_), c2 = 1.0 - std::pow(beta2, t_);
    auto& params = params_.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& t = params[k].tensor;
      if (!t.has_grad()) continue;
      const std::vector<double> g = t.grad();
      auto w = t.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (config_.optimizer == OptimizerKind::adam) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        } else {
          m[i] = config_.momentum * m[i] + g[i];
          w[i] -= lr * m[i];
        }
      }
    }
  }

 private:
  ParameterSet& params_;
  const TrainConfig& config_;
  std::size_t total_steps_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

Tensor batch_input(const std::vector<const GridSample*>& batch, std::size_t L) {
  std::vector<double> data;
  data.reserve(batch.size() * L * L);
  for (const auto* s : batch) data.insert(data.end(), s->input.values.begin(), s->input.values.end());
  return Tensor::from({batch.size(), 1, L, L}, std::move(data));
}

double mean_loss(CaModel& model, const std::vector<GridSample>& samples, const TrainConfig& config) {
  if (samples.empty()) return 0.0;
  const std::size_t L = model.config().L;
  std::mt19937_64 unused(0);
  double total = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += config.batch_size) {
    std::vector<const GridSample*> batch;
    std::vector<std::vector<double>> targets;
    for (std::size_t i = start; i < std::min(samples.size(), start + config.batch_size); ++i) {
      batch.push_back(&samples[i]);
      targets.push_back(samples[i].target);
    }
    const PathPrediction pred = model.forward(batch_input(batch, L), Mode::eval, unused);
    total += loss(pred, targets, config.loss_kind, config.softdtw(), L).item() * static_cast<double>(batch.size());
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (loss_kind == LossKind::custom && lambda == 0.0) {
    throw ConfigError("custom loss needs lambda > 0 (the hard minimum is not differentiable)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"optimizer", to_string(optimizer)}, {"momentum", momentum}, {"schedule", to_string(schedule)},
          {"seed", seed},
          {"loss_kind", to_string(loss_kind)}, {"lambda", lambda},     {"cost", to_string(cost)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"epochs",   "batch_size", "learning_rate", "optimizer", "momentum",
                                           "schedule", "seed",       "loss_kind",     "lambda",    "cost"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown train config key: " + key);
  }
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  const std::string opt = j.value("optimizer", std::string(to_string(c.optimizer)));
  if (opt != "adam" && opt != "sgd_momentum") throw ConfigError("optimizer must be adam or sgd_momentum");
  c.optimizer = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
  c.momentum = j.value("momentum", c.momentum);
  const std::string sched = j.value("schedule", std::string(to_string(c.schedule)));
  if (sched != "constant" && sched != "cosine") throw ConfigError("schedule must be constant or cosine");
  c.schedule = sched == "constant" ? LrSchedule::constant : LrSchedule::cosine;
  c.seed = j.value("seed", c.seed);
  const std::string lk = j.value("loss_kind", std::string(to_string(c.loss_kind)));
  if (lk != "custom" && lk != "ce") throw ConfigError("loss_kind must be custom or ce");
  c.loss_kind = lk == "custom" ? LossKind::custom : LossKind::ce;
  c.lambda = j.value("lambda", c.lambda);
  const std::string cost = j.value("cost", std::string(to_string(c.cost)));
  if (cost != "abs_diff" && cost != "squared_diff") throw ConfigError("cost must be abs_diff or squared_diff");
  c.cost = cost == "abs_diff" ? LocalCost::abs_diff : LocalCost::squared_diff;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Losses

Tensor divergence_loss(const Tensor& y_hat, const std::vector<std::vector<double>>& targets,
                       const SoftDtwParams& params, double normalizer) {
  if (y_hat.rank() != 2 || y_hat.dim(0) != targets.size()) {
    throw DimensionError("divergence_loss: predictions " + shape_to_string(y_hat.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (!(params.lambda > 0.0)) throw NumericError("divergence_loss: lambda must be > 0");
  const std::size_t N = y_hat.dim(0), L = y_hat.dim(1);
  auto grads = std::make_shared<std::vector<double>>(N * L);
  double total = 0.0;
  std::vector<double> a(L);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < L; ++i) a[i] = y_hat.data()[n * L + i] / normalizer;
    std::vector<double> b(targets[n]);
    for (double& v : b) v /= normalizer;
    total += divergence(a, b, params);
    const auto g = divergence_grad(a, b, params);
    for (std::size_t i = 0; i < L; ++i) (*grads)[n * L + i] = g[i] / normalizer / static_cast<double>(N);
  }
  return Tensor::make_result("divergence_loss", {1}, {total / static_cast<double>(N)}, {y_hat},
                             [grads](detail::Node& self) {
                               auto& g = self.parents[0]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*grads)[i];
                             });
}

Tensor loss(const PathPrediction& pred, const std::vector<std::vector<double>>& gt_grid, LossKind kind,
            const SoftDtwParams& params, std::size_t L) {
  for (const auto& t : gt_grid) {
    if (t.size() != L) throw DimensionError("loss: target length " + std::to_string(t.size()) + " != L");
  }
  if (kind == LossKind::custom) {
    if (pred.has_logits) throw ConfigError("custom loss needs the regression head");
    return divergence_loss(pred.y_hat, gt_grid, params, static_cast<double>(L - 1));
  }
  if (!pred.has_logits) throw ConfigError("cross-entropy loss needs the classification head");
  std::vector<std::size_t> classes;
  classes.reserve(gt_grid.size() * L);
  for (const auto& t : gt_grid) {
    for (double v : t) {
      classes.push_back(static_cast<std::size_t>(std::clamp(std::llround(v), 0LL, static_cast<long long>(L - 1))));
    }
  }
  return cross_entropy(pred.logits, classes);
}

GridSample prepare_sample(const PerformancePair& pair, std::size_t L) {
  Resized r = resize_and_pad(pair.similarity, L);
  GridSample s;
  s.id = pair.id;
  s.target = path_to_grid(pair.gt_path, r.meta);
  s.input = std::move(r.matrix);
  s.meta = r.meta;
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

FitResult fit(CaModel& model, const std::vector<const PerformancePair*>& train,
              const std::vector<const PerformancePair*>& val, const TrainConfig& config,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training split");
  for (const auto* t : train) {
    for (const auto* v : val) {
      if (t->id == v->id) throw std::invalid_argument("fit: pair " + t->id + " is in both train and val");
    }
  }
  const std::size_t L = model.config().L;
  std::vector<GridSample> train_samples, val_samples;
  for (const auto* p : train) train_samples.push_back(prepare_sample(*p, L));
  for (const auto* p : val) val_samples.push_back(prepare_sample(*p, L));

  ParameterSet& params = model.parameters();
  const std::size_t batches = (train_samples.size() + config.batch_size - 1) / config.batch_size;
  Optimizer optimizer(params, config, batches * static_cast<std::size_t>(config.epochs));
  std::mt19937_64 order_rng(mix_seed(config.seed, 1));
  std::mt19937_64 dropout_rng(mix_seed(config.seed, 2));
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  std::vector<double> best_state;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng() % i]);
    double epoch_total = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      std::vector<const GridSample*> batch;
      std::vector<std::vector<double>> targets;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&train_samples[order[i]]);
        targets.push_back(train_samples[order[i]].target);
      }
      params.zero_grad();
      double value = 0.0;
      try {
        const PathPrediction pred = model.forward(batch_input(batch, L), Mode::train, dropout_rng);
        Tensor l = loss(pred, targets, config.loss_kind, config.softdtw(), L);
        value = l.item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        l.backward();
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "non-finite value in epoch " << epoch << ", batch " << batch_id << " (pairs";
        for (const auto* s : batch) os << ' ' << s->id;
        os << "): " << e.what();
        throw NumericError(os.str());
      }
      optimizer.step();
      epoch_total += value * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_total / static_cast<double>(train_samples.size());
    rec.val_loss = val_samples.empty() ? rec.train_loss : mean_loss(model, val_samples, config);
    result.curve.push_back(rec);
    if (result.best_epoch == 0 || rec.val_loss < result.best_loss) {
      result.best_epoch = epoch;
      result.best_loss = rec.val_loss;
      best_state = params.snapshot();
    }
    if (on_epoch) on_epoch(rec);
  }
  params.zero_grad();
  if (!best_state.empty()) params.restore(best_state);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<double> alignment_accuracy(const AlignmentPath& pred, const AlignmentPath& gt, double frame_seconds,
                                       const std::vector<double>& margins) {
  if (pred.size() != gt.size()) {
    throw DimensionError("alignment_accuracy: predicted length " + std::to_string(pred.size()) +
                         " != ground truth length " + std::to_string(gt.size()));
  }
  if (gt.size() == 0) throw DimensionError("alignment_accuracy: empty path");
  std::vector<double> out;
  for (double m : margins) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (std::abs(pred.y[i] - gt.y[i]) * frame_seconds <= m) ++hits;
    }
    out.push_back(100.0 * static_cast<double>(hits) / static_cast<double>(gt.size()));
  }
  return out;
}

EvalReport evaluate(const std::vector<const PerformancePair*>& split, CaModel& model,
                    const std::vector<double>& margins) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  if (margins.empty()) throw std::invalid_argument("evaluate: no margins");
  EvalReport report;
  report.margins = margins;
  report.fingerprint = model.config().hash();
  const std::size_t M = margins.size();
  std::vector<double> sum(M, 0.0), base_sum(M, 0.0), s_sum(M, 0.0), s_base(M, 0.0);
  for (const auto* pair : split) {
    PairEvaluation rec;
    rec.id = pair->id;
    rec.structural = pair->structural;
    rec.plan = pair->plan;
    rec.predicted = predict_alignment(*pair, model);
    rec.baseline_path = dtw_classic(pair->similarity).path;
    rec.model = alignment_accuracy(rec.predicted, pair->gt_path, pair->frame_seconds, margins);
    rec.baseline = alignment_accuracy(rec.baseline_path, pair->gt_path, pair->frame_seconds, margins);
    for (std::size_t m = 0; m < M; ++m) {
      sum[m] += rec.model[m];
      base_sum[m] += rec.baseline[m];
      if (pair->structural) {
        s_sum[m] += rec.model[m];
        s_base[m] += rec.baseline[m];
      }
    }
    if (pair->structural) ++report.structural_pairs;
    report.pairs.push_back(std::move(rec));
  }
  const auto n = static_cast<double>(split.size());
  for (std::size_t m = 0; m < M; ++m) {
    report.overall.push_back(sum[m] / n);
    report.baseline_overall.push_back(base_sum[m] / n);
  }
  if (report.structural_pairs > 0) {
    const auto ns = static_cast<double>(report.structural_pairs);
    report.structural.emplace();
    report.baseline_structural.emplace();
    for (std::size_t m = 0; m < M; ++m) {
      report.structural->push_back(s_sum[m] / ns);
      report.baseline_structural->push_back(s_base[m] / ns);
    }
  }
  return report;
}

nlohmann::json EvalReport::to_json(bool include_paths) const {
  auto by_margin = [&](const std::vector<double>& values) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t m = 0; m < margins.size(); ++m) {
      std::ostringstream key;
      key << margins[m];
      j[key.str()] = values[m];
    }
    return j;
  };
  nlohmann::json j;
  j["margins_seconds"] = margins;
  j["fingerprint"] = fingerprint;
  j["pairs_evaluated"] = pairs.size();
  j["model"]["overall"] = by_margin(overall);
  j["baseline_dtw"]["overall"] = by_margin(baseline_overall);
  if (structural) {
    j["model"]["structural"] = by_margin(*structural);
    j["baseline_dtw"]["structural"] = by_margin(*baseline_structural);
  } else {
    j["model"]["structural"] = nullptr;
    j["baseline_dtw"]["structural"] = nullptr;
  }
  j["structural_pairs"] = structural_pairs;
  j["per_pair"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json r{{"id", p.id},
                     {"structural", p.structural},
                     {"plan", p.plan},
                     {"model", by_margin(p.model)},
                     {"baseline_dtw", by_margin(p.baseline)}};
    if (include_paths) {
      r["predicted_path"] = p.predicted.y;
      r["baseline_path"] = p.baseline_path.y;
    }
    j["per_pair"].push_back(std::move(r));
  }
  return j;
}

}  // namespace scoresync
