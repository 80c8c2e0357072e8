#include "scoresync/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>

#include "scoresync/random.hpp"

namespace scoresync {

namespace {

const char* to_string(DecoderKind k) { return k == DecoderKind::sasa ? "sasa" : "conv"; }
const char* to_string(HeadKind k) { return k == HeadKind::regression ? "regression" : "classification"; }

Tensor uniform_tensor(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = uniform_real(rng, -bound, bound);
  return Tensor::from(shape, std::move(v));
}

Tensor kaiming(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform_tensor(shape, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (L < 16 || L % 16 != 0) throw ConfigError("model L must be a positive multiple of 16");
  if (enc_channels.size() != 4) throw ConfigError("encoder needs exactly four channel widths");
  if (std::any_of(enc_channels.begin(), enc_channels.end(), [](std::size_t c) { return c == 0; })) {
    throw ConfigError("encoder channel widths must be positive");
  }
  if (heads == 0 || enc_channels.back() % heads != 0) {
    throw ConfigError("attention channels " + std::to_string(enc_channels.back()) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (spatial_extent_k % 2 == 0) throw ConfigError("spatial_extent_k must be odd");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  if (fc_hidden == 0) throw ConfigError("fc_hidden must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in (0,1]");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"L", L},
          {"enc_channels", enc_channels},
          {"heads", heads},
          {"spatial_extent_k", spatial_extent_k},
          {"sasa_layers", sasa_layers},
          {"decoder_kind", to_string(decoder_kind)},
          {"head_kind", to_string(head_kind)},
          {"dropout", dropout},
          {"fc_hidden", fc_hidden},
          {"bn_momentum", bn_momentum},
          {"init_seed", init_seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"L",          "enc_channels", "heads",     "spatial_extent_k",
                                           "sasa_layers", "decoder_kind", "head_kind", "dropout",
                                           "fc_hidden",   "bn_momentum",  "init_seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key: " + key);
  }
  ModelConfig c;
  c.L = j.value("L", c.L);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.heads = j.value("heads", c.heads);
  c.spatial_extent_k = j.value("spatial_extent_k", c.spatial_extent_k);
  c.sasa_layers = j.value("sasa_layers", c.sasa_layers);
  const std::string dec = j.value("decoder_kind", std::string(to_string(c.decoder_kind)));
  if (dec != "sasa" && dec != "conv") throw ConfigError("decoder_kind must be sasa or conv");
  c.decoder_kind = dec == "sasa" ? DecoderKind::sasa : DecoderKind::conv;
  const std::string head = j.value("head_kind", std::string(to_string(c.head_kind)));
  if (head != "regression" && head != "classification") {
    throw ConfigError("head_kind must be regression or classification");
  }
  c.head_kind = head == "regression" ? HeadKind::regression : HeadKind::classification;
  c.dropout = j.value("dropout", c.dropout);
  c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

std::string ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Stand-alone self-attention

Tensor sasa_layer(const Tensor& x, const SasaWeights& w, std::size_t heads, std::size_t k) {
  if (x.rank() != 4) throw DimensionError("sasa_layer: input must be [N,C,H,W], got " + shape_to_string(x.shape()));
  if (k % 2 == 0) throw DimensionError("sasa_layer: spatial extent k must be odd");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (heads == 0 || C % heads != 0) {
    throw DimensionError("sasa_layer: channels (axis 1) " + std::to_string(C) + " not divisible by heads " +
                         std::to_string(heads));
  }
  const std::size_t G = heads, dh = C / heads, dr = dh / 2, dc = dh - dr, half = (k - 1) / 2;
  const Shape wshape{G, dh, dh};
  if (w.wq.shape() != wshape || w.wk.shape() != wshape || w.wv.shape() != wshape) {
    throw DimensionError("sasa_layer: projection weights must be " + shape_to_string(wshape));
  }
  if ((dr > 0 && w.row_offsets.shape() != Shape{k, dr}) || w.col_offsets.shape() != Shape{k, dc}) {
    throw DimensionError("sasa_layer: offset tables must be [k, dh/2] and [k, dh - dh/2]");
  }

  const std::size_t HW = H * W, kk = k * k;
  // Projections laid out [N, G, HW, dh].
  auto Q = std::make_shared<std::vector<double>>(N * G * HW * dh);
  auto K = std::make_shared<std::vector<double>>(N * G * HW * dh);
  auto V = std::make_shared<std::vector<double>>(N * G * HW * dh);
  const double* xd = x.data().data();
  auto project = [&](const Tensor& wt, std::vector<double>& out) {
    const double* wd = wt.data().data();
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t g = 0; g < G; ++g) {
        const double* wg = wd + g * dh * dh;
        for (std::size_t pix = 0; pix < HW; ++pix) {
          double* o = out.data() + ((n * G + g) * HW + pix) * dh;
          for (std::size_t r = 0; r < dh; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < dh; ++c) acc += wg[r * dh + c] * xd[((n * C) + g * dh + c) * HW + pix];
            o[r] = acc;
          }
        }
      }
    }
  };
  project(w.wq, *Q);
  project(w.wk, *K);
  project(w.wv, *V);

  const double* rrow = dr > 0 ? w.row_offsets.data().data() : nullptr;
  const double* rcol = w.col_offsets.data().data();
  // Attention probabilities per (n, g, pixel, neighbour slot); masked slots stay 0.
  auto P = std::make_shared<std::vector<double>>(N * G * HW * kk, 0.0);
  std::vector<double> out(N * C * HW, 0.0);
  std::vector<double> logits(kk);
  std::vector<char> valid(kk);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < G; ++g) {
      const std::size_t base = (n * G + g) * HW;
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t pix = i * W + j;
          const double* q = Q->data() + (base + pix) * dh;
          double top = -1e300;
          for (std::size_t di = 0; di < k; ++di) {
            for (std::size_t dj = 0; dj < k; ++dj) {
              const long a = static_cast<long>(i + di) - static_cast<long>(half);
              const long b = static_cast<long>(j + dj) - static_cast<long>(half);
              const std::size_t slot = di * k + dj;
              valid[slot] = a >= 0 && b >= 0 && a < static_cast<long>(H) && b < static_cast<long>(W);
              if (!valid[slot]) continue;
              const double* kv = K->data() + (base + static_cast<std::size_t>(a) * W + static_cast<std::size_t>(b)) * dh;
              double s = 0.0;
              for (std::size_t d = 0; d < dh; ++d) s += q[d] * kv[d];
              for (std::size_t d = 0; d < dr; ++d) s += q[d] * rrow[di * dr + d];
              for (std::size_t d = 0; d < dc; ++d) s += q[dr + d] * rcol[dj * dc + d];
              logits[slot] = s;
              top = std::max(top, s);
            }
          }
          double* prob = P->data() + (base + pix) * kk;
          double z = 0.0;
          for (std::size_t slot = 0; slot < kk; ++slot) {
            if (!valid[slot]) continue;
            prob[slot] = std::exp(logits[slot] - top);
            z += prob[slot];
          }
          for (std::size_t slot = 0; slot < kk; ++slot) {
            if (!valid[slot]) continue;
            prob[slot] /= z;
            const std::size_t a = i + slot / k - half, b = j + slot % k - half;
            const double* v = V->data() + (base + a * W + b) * dh;
            for (std::size_t d = 0; d < dh; ++d) out[((n * C) + g * dh + d) * HW + pix] += prob[slot] * v[d];
          }
        }
      }
    }
  }

  return Tensor::make_result(
      "sasa", x.shape(), std::move(out), {x, w.wq, w.wk, w.wv, w.row_offsets, w.col_offsets},
      [=](detail::Node& self) {
        auto& x_node = *self.parents[0];
        std::vector<double> dQ(Q->size(), 0.0), dK(K->size(), 0.0), dV(V->size(), 0.0);
        std::vector<double> drow(k * dr, 0.0), dcol(k * dc, 0.0);
        const double* row_tab = dr > 0 ? self.parents[4]->data.data() : nullptr;
        const double* col_tab = self.parents[5]->data.data();
        std::vector<double> dy(dh), dp(kk);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t g = 0; g < G; ++g) {
            const std::size_t base = (n * G + g) * HW;
            for (std::size_t i = 0; i < H; ++i) {
              for (std::size_t j = 0; j < W; ++j) {
                const std::size_t pix = i * W + j;
                for (std::size_t d = 0; d < dh; ++d) dy[d] = self.grad[((n * C) + g * dh + d) * HW + pix];
                const double* prob = P->data() + (base + pix) * kk;
                const double* q = Q->data() + (base + pix) * dh;
                double* gq = dQ.data() + (base + pix) * dh;
                double weighted = 0.0;
                for (std::size_t slot = 0; slot < kk; ++slot) {
                  dp[slot] = 0.0;
                  if (prob[slot] == 0.0) continue;
                  const std::size_t a = i + slot / k - half, b = j + slot % k - half;
                  const std::size_t nb = base + a * W + b;
                  const double* v = V->data() + nb * dh;
                  double* gv = dV.data() + nb * dh;
                  double s = 0.0;
                  for (std::size_t d = 0; d < dh; ++d) {
                    s += dy[d] * v[d];
                    gv[d] += prob[slot] * dy[d];
                  }
                  dp[slot] = s;
                  weighted += prob[slot] * s;
                }
                for (std::size_t slot = 0; slot < kk; ++slot) {
                  if (prob[slot] == 0.0) continue;
                  const double dl = prob[slot] * (dp[slot] - weighted);
                  const std::size_t di = slot / k, dj = slot % k;
                  const std::size_t nb = base + (i + di - half) * W + (j + dj - half);
                  const double* kv = K->data() + nb * dh;
                  double* gk = dK.data() + nb * dh;
                  for (std::size_t d = 0; d < dh; ++d) {
                    gq[d] += dl * kv[d];
                    gk[d] += dl * q[d];
                  }
                  for (std::size_t d = 0; d < dr; ++d) {
                    gq[d] += dl * row_tab[di * dr + d];
                    drow[di * dr + d] += dl * q[d];
                  }
                  for (std::size_t d = 0; d < dc; ++d) {
                    gq[dr + d] += dl * col_tab[dj * dc + d];
                    dcol[dj * dc + d] += dl * q[dr + d];
                  }
                }
              }
            }
          }
        }
        // Back through the per-head linear projections.
        auto project_back = [&](detail::Node& w_node, const std::vector<double>& dproj) {
          const double* wd = w_node.data.data();
          double* gw = w_node.requires_grad ? w_node.grad_buffer().data() : nullptr;
          double* gx = x_node.requires_grad ? x_node.grad_buffer().data() : nullptr;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t g = 0; g < G; ++g) {
              const double* wg = wd + g * dh * dh;
              for (std::size_t pix = 0; pix < HW; ++pix) {
                const double* dpj = dproj.data() + ((n * G + g) * HW + pix) * dh;
                for (std::size_t r = 0; r < dh; ++r) {
                  if (dpj[r] == 0.0) continue;
                  for (std::size_t c = 0; c < dh; ++c) {
                    const std::size_t xi = ((n * C) + g * dh + c) * HW + pix;
                    if (gw) gw[g * dh * dh + r * dh + c] += dpj[r] * x_node.data[xi];
                    if (gx) gx[xi] += wg[r * dh + c] * dpj[r];
                  }
                }
              }
            }
          }
        };
        project_back(*self.parents[1], dQ);
        project_back(*self.parents[2], dK);
        project_back(*self.parents[3], dV);
        if (dr > 0 && self.parents[4]->requires_grad) {
          auto& g = self.parents[4]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += drow[i];
        }
        if (self.parents[5]->requires_grad) {
          auto& g = self.parents[5]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += dcol[i];
        }
      });
}

// ---------------------------------------------------------------------------
// CaModel

CaModel::CaModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  encoder_.reserve(config_.enc_channels.size());
  std::size_t in_ch = 1;
  for (std::size_t b = 0; b < config_.enc_channels.size(); ++b) {
    const std::size_t out_ch = config_.enc_channels[b];
    const std::string prefix = "enc.block" + std::to_string(b + 1);
    EncoderBlock blk;
    blk.conv_w = params_.add(prefix + ".conv.weight", kaiming({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    blk.conv_b = params_.add(prefix + ".conv.bias", Tensor::zeros({out_ch}));
    blk.gamma = params_.add(prefix + ".bn.gamma", Tensor::full({out_ch}, 1.0));
    blk.beta = params_.add(prefix + ".bn.beta", Tensor::zeros({out_ch}));
    blk.stats = BatchNormStats(out_ch);
    blk.stats.momentum = config_.bn_momentum;
    encoder_.push_back(std::move(blk));
    params_.add_buffer(prefix + ".bn.running_mean", &encoder_.back().stats.running_mean);
    params_.add_buffer(prefix + ".bn.running_var", &encoder_.back().stats.running_var);
    in_ch = out_ch;
  }

  const std::size_t C = config_.enc_channels.back();
  const std::size_t dh = C / config_.heads, dr = dh / 2, dc = dh - dr, k = config_.spatial_extent_k;
  for (std::size_t l = 0; l < config_.sasa_layers; ++l) {
    DecoderLayer layer;
    if (config_.decoder_kind == DecoderKind::sasa) {
      const std::string prefix = "dec.sasa" + std::to_string(l + 1);
      const double bound = std::sqrt(3.0 / static_cast<double>(dh));
      layer.sasa.wq = params_.add(prefix + ".wq", uniform_tensor({config_.heads, dh, dh}, bound, rng));
      layer.sasa.wk = params_.add(prefix + ".wk", uniform_tensor({config_.heads, dh, dh}, bound, rng));
      layer.sasa.wv = params_.add(prefix + ".wv", uniform_tensor({config_.heads, dh, dh}, bound, rng));
      if (dr > 0) layer.sasa.row_offsets = params_.add(prefix + ".row_offsets", Tensor::zeros({k, dr}));
      layer.sasa.col_offsets = params_.add(prefix + ".col_offsets", Tensor::zeros({k, dc}));
    } else {
      const std::string prefix = "dec.conv" + std::to_string(l + 1);
      layer.conv_w = params_.add(prefix + ".weight", kaiming({C, C, 3, 3}, C * 9, rng));
      layer.conv_b = params_.add(prefix + ".bias", Tensor::zeros({C}));
    }
    decoder_.push_back(std::move(layer));
  }

  const std::size_t side = config_.L / 8;
  const std::size_t flat = C * side * side;
  const std::size_t outputs = config_.head_kind == HeadKind::regression ? config_.L : config_.L * config_.L;
  fc1_w_ = params_.add("head.fc1.weight", kaiming({flat, config_.fc_hidden}, flat, rng));
  fc1_b_ = params_.add("head.fc1.bias", Tensor::zeros({config_.fc_hidden}));
  fc2_w_ = params_.add("head.fc2.weight", kaiming({config_.fc_hidden, outputs}, config_.fc_hidden, rng));
  fc2_b_ = params_.add("head.fc2.bias", Tensor::zeros({outputs}));
}

Encoded CaModel::encode(const Tensor& input, Mode mode) {
  if (input.rank() != 4 || input.dim(1) != 1 || input.dim(2) != config_.L || input.dim(3) != config_.L) {
    throw DimensionError("encode: input must be [N,1," + std::to_string(config_.L) + "," + std::to_string(config_.L) +
                         "], got " + shape_to_string(input.shape()));
  }
  Encoded out;
  Tensor h = input;
  for (auto& blk : encoder_) {
    h = conv2d(h, blk.conv_w, blk.conv_b, 1, 1);
    h = batchnorm2d(h, blk.gamma, blk.beta, blk.stats, mode);
    h = relu(h);
    PoolResult pooled = maxpool2d_with_indices(h, 2);
    h = pooled.output;
    out.masks.push_back(std::move(pooled.mask));
  }
  out.activations = h;
  return out;
}

PathPrediction CaModel::decode(const Encoded& encoded, Mode mode, std::mt19937_64& rng) {
  if (encoded.masks.size() != encoder_.size()) throw DimensionError("decode: expected one mask per encoder block");
  const IndexMask& last = encoded.masks.back();
  Tensor h = max_unpool2d(encoded.activations, last, last.input_shape[2], last.input_shape[3]);
  for (auto& layer : decoder_) {
    if (config_.decoder_kind == DecoderKind::sasa) {
      h = sasa_layer(h, layer.sasa, config_.heads, config_.spatial_extent_k);
    } else {
      h = conv2d(h, layer.conv_w, layer.conv_b, 1, 1);
    }
    h = relu(h);
  }
  const std::size_t N = h.dim(0);
  h = flatten(h);
  h = relu(dense(h, fc1_w_, fc1_b_));
  h = dropout(h, config_.dropout, mode, rng);
  Tensor z = dense(h, fc2_w_, fc2_b_);

  PathPrediction pred;
  const std::size_t L = config_.L;
  if (config_.head_kind == HeadKind::regression) {
    pred.y_hat = scaled_sigmoid(z, static_cast<double>(L - 1));
    return pred;
  }
  pred.logits = reshape(z, {N * L, L});
  pred.has_logits = true;
  std::vector<double> y(N * L);
  for (std::size_t r = 0; r < N * L; ++r) {
    const double* row = z.data().data() + r * L;
    y[r] = static_cast<double>(std::max_element(row, row + L) - row);
  }
  pred.y_hat = Tensor::from({N, L}, std::move(y));
  return pred;
}

PathPrediction CaModel::forward(const Tensor& input, Mode mode, std::mt19937_64& rng) {
  return decode(encode(input, mode), mode, rng);
}

void CaModel::save(const std::filesystem::path& stem, const nlohmann::json& extra) const {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  if (stem.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(stem.parent_path(), ec);
    if (ec) throw IoError("cannot create " + stem.parent_path().string() + ": " + ec.message());
  }
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["format"] = "scoresync-checkpoint";
  j["model_config"] = config_.to_json();
  j["config_hash"] = config_.hash();
  j["binary"] = bin.filename().string();
  j["tensors"] = params_.write_binary(bin);
  std::ofstream os(side, std::ios::trunc);
  if (!os) throw IoError("cannot write " + side.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + side.string());
}

CaModel CaModel::load(const std::filesystem::path& stem) {
  auto side = stem;
  side += ".json";
  std::ifstream is(side);
  if (!is) throw IoError("cannot open checkpoint sidecar " + side.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint sidecar: ") + e.what());
  }
  ModelConfig config = ModelConfig::from_json(j.at("model_config"));
  if (config.hash() != j.at("config_hash").get<std::string>()) {
    throw ConfigError("checkpoint config hash mismatch: sidecar says " + j.at("config_hash").get<std::string>() +
                      ", config hashes to " + config.hash());
  }
  CaModel model(config);
  model.params_.read_binary(stem.parent_path() / j.at("binary").get<std::string>(), j.at("tensors"));
  return model;
}

Tensor grid_input(const Matrix& resized) {
  if (resized.rows != resized.cols) throw DimensionError("grid_input: matrix must be square");
  return Tensor::from({1, 1, resized.rows, resized.cols}, resized.values);
}

std::vector<double> predict_grid(const Matrix& resized, CaModel& model) {
  std::mt19937_64 unused(0);
  const PathPrediction pred = model.forward(grid_input(resized), Mode::eval, unused);
  return {pred.y_hat.data().begin(), pred.y_hat.data().end()};
}

AlignmentPath predict_alignment(const PerformancePair& pair, CaModel& model) {
  const Resized r = resize_and_pad(pair.similarity, model.config().L);
  return rescale_path(predict_grid(r.matrix, model), r.meta);
}

}  // namespace scoresync
