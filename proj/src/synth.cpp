#include "scoresync/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "scoresync/random.hpp"

namespace scoresync {

namespace {

constexpr std::array<int, 7> kMajorScale{0, 2, 4, 5, 7, 9, 11};
constexpr int kMinSegmentFrames = 4;
constexpr int kPlanRetries = 64;

int degree_to_midi(int tonic, int degree) {
  const int octave = degree >= 0 ? degree / 7 : -((-degree + 6) / 7);
  const int step = degree - 7 * octave;
  return tonic + 12 * octave + kMajorScale[static_cast<std::size_t>(step)];
}

// Piecewise-linear score->performance time map of one plan.
struct WarpPiece {
  double score_begin;
  double score_end;
  double perf_begin;
  double factor;
  std::size_t instance;

  double perf_end() const { return perf_begin + (score_end - score_begin) * factor; }
};

std::vector<WarpPiece> warp_pieces(const SegmentPlan& plan) {
  std::vector<WarpPiece> pieces;
  double t = 0.0;
  for (std::size_t k = 0; k < plan.instances.size(); ++k) {
    const auto& inst = plan.instances[k];
    std::vector<int> edges{inst.score_begin};
    edges.insert(edges.end(), inst.tempo_breaks.begin(), inst.tempo_breaks.end());
    edges.push_back(inst.score_end);
    if (inst.factors.size() + 1 != edges.size()) throw ConfigError("segment plan: one tempo factor per piece required");
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
      WarpPiece w{static_cast<double>(edges[e]), static_cast<double>(edges[e + 1]), t, inst.factors[e], k};
      t = w.perf_end();
      pieces.push_back(w);
    }
  }
  return pieces;
}

std::vector<int> distinct_sorted_breaks(std::mt19937_64& rng, int count, int lo, int hi) {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < count) {
    const int v = uniform_int(rng, lo, hi);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string SegmentPlan::label() const {
  std::string out;
  for (const auto& inst : instances) {
    if (!out.empty()) out += ' ';
    out += static_cast<char>('A' + inst.segment);
  }
  return out;
}

std::vector<NoteEvent> generate_piece(std::uint64_t seed, int n_frames, int polyphony) {
  if (n_frames < 16) throw ConfigError("generate_piece: n_frames must be >= 16");
  if (polyphony < 1) throw ConfigError("generate_piece: polyphony must be >= 1");
  std::mt19937_64 rng(seed);
  const int tonic = 48 + uniform_int(rng, 0, 11);
  std::vector<NoteEvent> events;
  for (int voice = 0; voice < polyphony; ++voice) {
    // Upper voice moves fastest; lower voices sit an octave apart.
    int degree = uniform_int(rng, 0, 6) + 7 * std::max(0, 2 - voice);
    const int min_dur = 2 + voice, max_dur = 6 + 2 * voice;
    for (int t = 0; t < n_frames;) {
      const int dur = std::min(uniform_int(rng, min_dur, max_dur), n_frames - t);
      degree += uniform_int(rng, -3, 3);
      const int pitch = std::clamp(degree_to_midi(tonic, degree), 21, 108);
      events.push_back({t, dur, pitch});
      t += dur;
    }
  }
  return events;
}

SegmentPlan make_segment_plan(int score_frames, std::uint64_t seed, TempoRange tempo, bool structural) {
  if (!(tempo.lo > 0.0 && tempo.lo <= tempo.hi)) throw ConfigError("tempo range must satisfy 0 < lo <= hi");
  if (tempo.hi / tempo.lo > 4.0) throw ConfigError("tempo range ratio hi/lo must be <= 4");
  if (score_frames < 2) throw ConfigError("segment plan: score too short");
  std::mt19937_64 rng(seed);
  SegmentPlan plan;
  if (!structural) {
    plan.boundaries = {0, score_frames};
    const int pieces = std::min(uniform_int(rng, 3, 6), score_frames);
    SegmentInstance inst{0, 0, score_frames, distinct_sorted_breaks(rng, pieces - 1, 1, score_frames - 1), {}};
    for (int k = 0; k < pieces; ++k) inst.factors.push_back(uniform_real(rng, tempo.lo, tempo.hi));
    plan.instances.push_back(std::move(inst));
    return plan;
  }

  for (int attempt = 0; attempt < kPlanRetries; ++attempt) {
    const int cuts = uniform_int(rng, 1, 2);
    if (score_frames - 1 < cuts) continue;
    std::vector<int> bounds{0};
    for (int b : distinct_sorted_breaks(rng, cuts, 1, score_frames - 1)) bounds.push_back(b);
    bounds.push_back(score_frames);
    bool degenerate = false;
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) degenerate |= bounds[s + 1] - bounds[s] < kMinSegmentFrames;
    if (degenerate) continue;

    static const std::array<std::vector<int>, 2> kOneCut{{{0, 1, 0}, {0, 1, 0, 1}}};
    static const std::array<std::vector<int>, 2> kTwoCuts{{{0, 1, 2, 1, 2}, {0, 1, 0, 2}}};
    const auto& order = (cuts == 1 ? kOneCut : kTwoCuts)[static_cast<std::size_t>(uniform_int(rng, 0, 1))];
    plan.boundaries = bounds;
    for (int seg : order) {
      plan.instances.push_back({seg, bounds[static_cast<std::size_t>(seg)],
                                bounds[static_cast<std::size_t>(seg) + 1], {},
                                {uniform_real(rng, tempo.lo, tempo.hi)}});
    }
    return plan;
  }
  throw ConfigError("segment plan: could not place boundaries with segments of >= " +
                    std::to_string(kMinSegmentFrames) + " frames in a score of " + std::to_string(score_frames) +
                    " frames");
}

Rendering render_with_plan(const std::vector<NoteEvent>& score_events, const SegmentPlan& plan) {
  if (plan.boundaries.size() < 2) throw ConfigError("segment plan has no boundaries");
  const int q = plan.boundaries.back();
  const auto pieces = warp_pieces(plan);
  const double total = pieces.empty() ? 0.0 : pieces.back().perf_end();
  const int p = static_cast<int>(std::llround(total));
  if (p < 1) throw ConfigError("rendered performance is empty");

  Rendering out;
  out.plan = plan;
  out.perf_frames = p;
  out.gt_path.y.resize(static_cast<std::size_t>(p));
  std::size_t k = 0;
  for (int i = 0; i < p; ++i) {
    const double t = static_cast<double>(i);
    while (k + 1 < pieces.size() && t >= pieces[k].perf_end()) ++k;
    const auto& w = pieces[k];
    const double s = w.score_begin + (t - w.perf_begin) / w.factor;
    out.gt_path.y[static_cast<std::size_t>(i)] =
        std::clamp(s, std::max(0.0, w.score_begin), std::min(w.score_end, static_cast<double>(q - 1)));
  }

  for (std::size_t inst = 0; inst < plan.instances.size(); ++inst) {
    const auto& seg = plan.instances[inst];
    auto warp = [&](double s) {
      for (const auto& w : pieces) {
        if (w.instance == inst && s <= w.score_end) return w.perf_begin + (s - w.score_begin) * w.factor;
      }
      return total;
    };
    for (const auto& e : score_events) {
      const int on = std::max(e.onset_frame, seg.score_begin);
      const int off = std::min(e.end_frame(), seg.score_end);
      if (on >= off) continue;
      const int perf_on = std::clamp(static_cast<int>(std::llround(warp(on))), 0, p);
      const int perf_off = std::clamp(static_cast<int>(std::llround(warp(off))), 0, p);
      if (perf_off > perf_on) out.perf_events.push_back({perf_on, perf_off - perf_on, e.midi_pitch});
    }
  }
  return out;
}

Rendering render_performance(const std::vector<NoteEvent>& score_events, std::uint64_t seed, TempoRange tempo,
                             bool structural) {
  int q = 0;
  for (const auto& e : score_events) q = std::max(q, e.end_frame());
  return render_with_plan(score_events, make_segment_plan(q, seed, tempo, structural));
}

Matrix chroma_features(const std::vector<NoteEvent>& events, int n_frames) {
  if (n_frames < 1) throw DimensionError("chroma_features: n_frames must be positive");
  Matrix chroma(static_cast<std::size_t>(n_frames), 12, 0.0);
  for (const auto& e : events) {
    const int begin = std::max(0, e.onset_frame);
    const int end = std::min(n_frames, e.end_frame());
    const auto bin = static_cast<std::size_t>(((e.midi_pitch % 12) + 12) % 12);
    for (int f = begin; f < end; ++f) chroma(static_cast<std::size_t>(f), bin) += 1.0;
  }
  for (std::size_t f = 0; f < chroma.rows; ++f) {
    double norm = 0.0;
    for (std::size_t b = 0; b < 12; ++b) norm += chroma(f, b) * chroma(f, b);
    if (norm == 0.0) continue;
    norm = std::sqrt(norm);
    for (std::size_t b = 0; b < 12; ++b) chroma(f, b) /= norm;
  }
  return chroma;
}

Matrix cross_similarity(const Matrix& perf, const Matrix& score) {
  if (perf.rows == 0 || score.rows == 0) throw DimensionError("cross_similarity: empty feature sequence");
  if (perf.cols != score.cols) {
    throw DimensionError("cross_similarity: feature dimension (axis 1) " + std::to_string(perf.cols) + " vs " +
                         std::to_string(score.cols));
  }
  Matrix m(perf.rows, score.rows);
  for (std::size_t i = 0; i < perf.rows; ++i) {
    for (std::size_t j = 0; j < score.rows; ++j) {
      double d = 0.0;
      for (std::size_t b = 0; b < perf.cols; ++b) {
        const double diff = perf(i, b) - score(j, b);
        d += diff * diff;
      }
      m(i, j) = std::sqrt(d);
    }
  }
  return m;
}

double interpolate(std::span<const double> values, double position) {
  if (values.empty()) throw DimensionError("interpolate: empty sequence");
  const double last = static_cast<double>(values.size() - 1);
  position = std::clamp(position, 0.0, last);
  const auto lo = static_cast<std::size_t>(std::floor(position));
  const double frac = position - static_cast<double>(lo);
  if (frac == 0.0 || lo + 1 >= values.size()) return values[lo];
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

Resized resize_and_pad(const Matrix& m, std::size_t L) {
  if (m.rows < 2 || m.cols < 1) throw DimensionError("resize_and_pad: need at least 2 performance frames");
  if (L < 2) throw ConfigError("resize_and_pad: grid size must be >= 2");
  ResizeMeta meta;
  meta.p = m.rows;
  meta.q = m.cols;
  meta.L = L;
  meta.ratio = static_cast<double>(L - 1) / static_cast<double>(m.rows - 1);
  const double span = static_cast<double>(m.cols - 1) * meta.ratio;
  meta.score_cols = static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
  if (meta.score_cols > L) {
    throw DimensionError("resize_and_pad: input too long, score needs " + std::to_string(meta.score_cols) +
                         " grid columns but L = " + std::to_string(L));
  }

  const double pad = *std::max_element(m.values.begin(), m.values.end());
  Resized out{Matrix(L, L, pad), meta};
  // Columns first (score axis), then rows (performance axis).
  Matrix cols_scaled(m.rows, meta.score_cols);
  std::vector<double> line(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::copy_n(m.row(r), m.cols, line.begin());
    for (std::size_t c = 0; c < meta.score_cols; ++c) {
      cols_scaled(r, c) = interpolate(line, static_cast<double>(c) / meta.ratio);
    }
  }
  std::vector<double> column(m.rows);
  for (std::size_t c = 0; c < meta.score_cols; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) column[r] = cols_scaled(r, c);
    for (std::size_t r = 0; r < L; ++r) out.matrix(r, c) = interpolate(column, static_cast<double>(r) / meta.ratio);
  }
  return out;
}

AlignmentPath rescale_path(std::span<const double> grid_path, const ResizeMeta& meta) {
  if (grid_path.size() != meta.L) {
    throw DimensionError("rescale_path: path length " + std::to_string(grid_path.size()) + " != L " +
                         std::to_string(meta.L));
  }
  AlignmentPath out;
  out.y.resize(meta.p);
  const double top = static_cast<double>(meta.q - 1);
  for (std::size_t i = 0; i < meta.p; ++i) {
    const double v = interpolate(grid_path, static_cast<double>(i) * meta.ratio) / meta.ratio;
    out.y[i] = std::clamp(v, 0.0, top);
  }
  return out;
}

std::vector<double> path_to_grid(const AlignmentPath& path, const ResizeMeta& meta) {
  if (path.size() != meta.p) {
    throw DimensionError("path_to_grid: path length " + std::to_string(path.size()) + " != p " +
                         std::to_string(meta.p));
  }
  std::vector<double> out(meta.L);
  const double top = static_cast<double>(meta.L - 1);
  for (std::size_t r = 0; r < meta.L; ++r) {
    out[r] = std::clamp(interpolate(path.y, static_cast<double>(r) / meta.ratio) * meta.ratio, 0.0, top);
  }
  return out;
}

}  // namespace scoresync
