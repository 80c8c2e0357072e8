#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "scoresync/errors.hpp"
#include "scoresync/random.hpp"
#include "scoresync/synth.hpp"

using namespace scoresync;

namespace {

std::size_t downward_jumps(const AlignmentPath& path) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < path.size(); ++i) n += path.y[i] < path.y[i - 1];
  return n;
}

bool monotone(const AlignmentPath& path) { return downward_jumps(path) == 0; }

SegmentPlan single_tempo_plan(int q, double factor) {
  SegmentPlan plan;
  plan.boundaries = {0, q};
  plan.instances.push_back({0, 0, q, {}, {factor}});
  return plan;
}

}  // namespace

// --- generate_piece -----------------------------------------------------------

TEST(GeneratePiece, SameSeedSameEvents) {
  EXPECT_EQ(generate_piece(5, 32, 2), generate_piece(5, 32, 2));
  EXPECT_NE(generate_piece(5, 32, 2), generate_piece(6, 32, 2));
}

TEST(GeneratePiece, MonophonicVoiceNeverOverlaps) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto events = generate_piece(seed, 40, 1);
    std::sort(events.begin(), events.end(), [](auto& a, auto& b) { return a.onset_frame < b.onset_frame; });
    for (std::size_t i = 1; i < events.size(); ++i) EXPECT_GE(events[i].onset_frame, events[i - 1].end_frame());
  }
}

TEST(GeneratePiece, EventsStayInsideThePieceAndCoverEveryFrame) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (int polyphony : {1, 2, 3}) {
      const int n = 16 + static_cast<int>(seed);
      const auto events = generate_piece(seed, n, polyphony);
      std::vector<int> sounding(static_cast<std::size_t>(n), 0);
      for (const auto& e : events) {
        EXPECT_GE(e.onset_frame, 0);
        EXPECT_LT(e.onset_frame, n);
        EXPECT_GE(e.duration_frames, 1);
        EXPECT_LE(e.end_frame(), n);
        EXPECT_GE(e.midi_pitch, 21);
        EXPECT_LE(e.midi_pitch, 108);
        for (int f = e.onset_frame; f < e.end_frame(); ++f) ++sounding[static_cast<std::size_t>(f)];
      }
      for (int count : sounding) EXPECT_GE(count, 1);
    }
  }
}

TEST(GeneratePiece, PitchesStayOnOneMajorScale) {
  const auto events = generate_piece(11, 64, 2);
  std::set<int> classes;
  for (const auto& e : events) classes.insert(e.midi_pitch % 12);
  EXPECT_LE(classes.size(), 7u);
}

TEST(GeneratePiece, RejectsShortPieces) {
  EXPECT_THROW(generate_piece(1, 15, 2), ConfigError);
  EXPECT_THROW(generate_piece(1, 16, 0), ConfigError);
}

// --- segment plans and rendering -------------------------------------------

TEST(Render, UnitTempoGivesIdentityDiagonal) {
  const auto score = generate_piece(3, 30, 2);
  const auto r = render_performance(score, 9, {1.0, 1.0}, false);
  ASSERT_EQ(r.perf_frames, 30);
  for (std::size_t i = 0; i < r.gt_path.size(); ++i) {
    EXPECT_NEAR(r.gt_path.y[i], static_cast<double>(i), 1e-12);
  }
  EXPECT_EQ(r.perf_events, score);
}

TEST(Render, ConstantFactorTwoDoublesLengthWithHalfSlope) {
  const auto score = generate_piece(4, 24, 2);
  const auto r = render_with_plan(score, single_tempo_plan(24, 2.0));
  EXPECT_EQ(r.perf_frames, 48);
  for (std::size_t i = 1; i + 2 < r.gt_path.size(); ++i) EXPECT_NEAR(r.gt_path.y[i] - r.gt_path.y[i - 1], 0.5, 1e-12);
  for (const auto& e : r.perf_events) EXPECT_EQ(e.duration_frames % 2, 0);
}

TEST(Render, RepeatPlanHasExactlyOneDownwardJump) {
  const auto score = generate_piece(5, 30, 2);
  SegmentPlan plan;
  plan.boundaries = {0, 12, 30};
  plan.instances = {{0, 0, 12, {}, {1.0}}, {1, 12, 30, {}, {1.2}}, {0, 0, 12, {}, {0.9}}};
  ASSERT_EQ(plan.label(), "A B A");
  const auto r = render_with_plan(score, plan);
  EXPECT_EQ(downward_jumps(r.gt_path), 1u);
}

TEST(Render, NonStructuralPlansUseThreeToSixTempoPieces) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto plan = make_segment_plan(32, seed, {1.0, 1.5}, false);
    ASSERT_EQ(plan.instances.size(), 1u);
    const auto& inst = plan.instances[0];
    EXPECT_GE(inst.factors.size(), 3u);
    EXPECT_LE(inst.factors.size(), 6u);
    EXPECT_EQ(inst.tempo_breaks.size() + 1, inst.factors.size());
    for (double f : inst.factors) {
      EXPECT_GE(f, 1.0);
      EXPECT_LE(f, 1.5);
    }
  }
}

TEST(Render, StructuralPlansHaveOneBackwardJumpAndLongSegments) {
  const std::set<std::string> patterns{"A B A", "A B A B", "A B C B C", "A B A C"};
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto plan = make_segment_plan(32, seed, {1.0, 1.5}, true);
    seen.insert(plan.label());
    EXPECT_TRUE(patterns.count(plan.label())) << plan.label();
    for (std::size_t s = 0; s + 1 < plan.boundaries.size(); ++s) {
      EXPECT_GE(plan.boundaries[s + 1] - plan.boundaries[s], 4);
    }
  }
  EXPECT_EQ(seen, patterns);
}

TEST(Render, GroundTruthBoundsAndMonotonicity) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const int q = 24 + static_cast<int>(seed % 17);
    const auto score = generate_piece(seed, q, 2);
    const bool structural = seed % 2 == 1;
    const auto r = render_performance(score, seed * 7 + 1, {1.0, 1.5}, structural);
    ASSERT_EQ(r.gt_path.size(), static_cast<std::size_t>(r.perf_frames));
    for (double y : r.gt_path.y) {
      EXPECT_GE(y, 0.0);
      EXPECT_LE(y, q - 1.0);
    }
    EXPECT_EQ(monotone(r.gt_path), !structural) << r.plan.label();
  }
}

TEST(Render, InvalidTempoRangeIsConfigError) {
  const auto score = generate_piece(1, 20, 1);
  EXPECT_THROW(render_performance(score, 1, {0.0, 1.0}, false), ConfigError);
  EXPECT_THROW(render_performance(score, 1, {1.5, 1.0}, false), ConfigError);
  EXPECT_THROW(render_performance(score, 1, {0.5, 2.5}, false), ConfigError);
}

TEST(Render, ScoreTooShortForSegmentsIsConfigError) {
  EXPECT_THROW(make_segment_plan(7, 1, {1.0, 1.0}, true), ConfigError);
}

// --- features -------------------------------------------------------------

TEST(Chroma, SingleNoteIsOneHot) {
  const Matrix c = chroma_features({{0, 2, 60}}, 2);
  for (std::size_t b = 0; b < 12; ++b) EXPECT_EQ(c(0, b), b == 0 ? 1.0 : 0.0);
}

TEST(Chroma, TriadIsNormalized) {
  const Matrix c = chroma_features({{0, 1, 60}, {0, 1, 64}, {0, 1, 67}}, 1);
  for (std::size_t b = 0; b < 12; ++b) {
    EXPECT_NEAR(c(0, b), (b == 0 || b == 4 || b == 7) ? 1.0 / std::sqrt(3.0) : 0.0, 1e-15);
  }
}

TEST(Chroma, UnchangedNotesGiveIdenticalRows) {
  const Matrix c = chroma_features({{0, 3, 62}, {1, 2, 69}}, 3);
  for (std::size_t b = 0; b < 12; ++b) EXPECT_EQ(c(1, b), c(2, b));
}

TEST(CrossSimilarity, HandValues) {
  Matrix a(1, 12, 0.0), b(2, 12, 0.0);
  a(0, 0) = 1.0;
  b(0, 0) = 1.0;
  b(1, 4) = 1.0;
  const Matrix m = cross_similarity(a, b);
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_NEAR(m(0, 1), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cross_similarity(Matrix(1, 12), Matrix(1, 11)), DimensionError);
}

TEST(CrossSimilarity, NonNegativeBoundedAndZeroOnlyOnEqualRows) {
  const auto score = generate_piece(8, 30, 3);
  const auto perf = render_performance(score, 2, {1.0, 1.5}, true);
  const Matrix s = chroma_features(score, 30), p = chroma_features(perf.perf_events, perf.perf_frames);
  const Matrix m = cross_similarity(p, s);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      EXPECT_GE(m(i, j), 0.0);
      EXPECT_LE(m(i, j), 2.0);
      const bool equal_rows = std::equal(p.row(i), p.row(i) + 12, s.row(j));
      EXPECT_EQ(m(i, j) == 0.0, equal_rows);
    }
}

// --- resizing ---------------------------------------------------------------

TEST(Resize, SquareAtGridSizeIsIdentity) {
  Matrix m(16, 16);
  std::mt19937_64 rng(1);
  for (double& v : m.values) v = uniform01(rng);
  const Resized r = resize_and_pad(m, 16);
  EXPECT_EQ(r.matrix, m);
  EXPECT_EQ(r.meta.score_cols, 16u);
  EXPECT_EQ(r.meta.ratio, 1.0);
  std::vector<double> diag(16);
  for (std::size_t i = 0; i < 16; ++i) diag[i] = static_cast<double>(i);
  EXPECT_EQ(rescale_path(diag, r.meta).y, diag);
}

TEST(Resize, ConstantMatrixStaysConstantAndPadsWithMax) {
  const Resized r = resize_and_pad(Matrix(9, 7, 0.25), 16);
  EXPECT_EQ(r.meta.ratio, 15.0 / 8.0);
  EXPECT_EQ(r.meta.score_cols, 12u);  // floor(6 * 15/8) + 1
  for (double v : r.matrix.values) EXPECT_EQ(v, 0.25);

  Matrix m(9, 7, 0.25);
  m(3, 3) = 1.5;
  const Resized padded = resize_and_pad(m, 16);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = padded.meta.score_cols; j < 16; ++j) EXPECT_EQ(padded.matrix(i, j), 1.5);
  EXPECT_EQ(padded.matrix(0, 0), 0.25);
}

TEST(Resize, InterpolatesLinearly) {
  Matrix m(2, 2);
  m.values = {0.0, 1.0, 2.0, 3.0};
  const Resized r = resize_and_pad(m, 16);
  EXPECT_EQ(r.meta.score_cols, 16u);
  EXPECT_NEAR(r.matrix(0, 15), 1.0, 1e-15);
  EXPECT_NEAR(r.matrix(15, 0), 2.0, 1e-15);
  EXPECT_NEAR(r.matrix(5, 10), 2.0 * 5 / 15 + 10.0 / 15, 1e-12);
}

TEST(Resize, ScoreLongerThanPerformanceIsRejected) {
  EXPECT_THROW(resize_and_pad(Matrix(10, 11), 16), DimensionError);
  EXPECT_THROW(resize_and_pad(Matrix(1, 1), 16), DimensionError);
}

TEST(Resize, RoundTripOfMonotonePathsWithinOneFrame) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = static_cast<std::size_t>(uniform_int(rng, 2, 64));
    const std::size_t q = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<int>(p)));
    const Resized r = resize_and_pad(Matrix(p, q, 1.0), 64);
    AlignmentPath path;
    double y = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      y = std::min(static_cast<double>(q - 1), y + uniform_real(rng, 0.0, 2.0));
      path.y.push_back(trial % 4 == 0 ? static_cast<double>(i) * (q - 1.0) / (p - 1.0) : y);
    }
    const AlignmentPath back = rescale_path(path_to_grid(path, r.meta), r.meta);
    ASSERT_EQ(back.size(), p);
    for (std::size_t i = 0; i < p; ++i) EXPECT_LE(std::abs(back.y[i] - path.y[i]), 1.0);
  }
}

TEST(Resize, ConstantGridPathScalesDown) {
  const Resized r = resize_and_pad(Matrix(33, 20, 1.0), 64);
  const std::vector<double> c(64, 12.0);
  for (double y : rescale_path(c, r.meta).y) EXPECT_DOUBLE_EQ(y, 12.0 / r.meta.ratio);
  const std::vector<double> top(64, 63.0);
  for (double y : rescale_path(top, r.meta).y) EXPECT_EQ(y, 19.0);
  EXPECT_THROW(rescale_path(std::vector<double>(10, 0.0), r.meta), DimensionError);
}

TEST(Interpolate, ClampsAndBlends) {
  const std::vector<double> v{0, 10, 20};
  EXPECT_EQ(interpolate(v, -1.0), 0.0);
  EXPECT_EQ(interpolate(v, 0.25), 2.5);
  EXPECT_EQ(interpolate(v, 2.0), 20.0);
  EXPECT_EQ(interpolate(v, 7.0), 20.0);
  EXPECT_THROW(interpolate(std::vector<double>{}, 0.0), DimensionError);
}
