#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scoresync/matrix.hpp"

namespace scoresync {

struct NoteEvent {
  int onset_frame = 0;
  int duration_frames = 1;
  int midi_pitch = 60;

  int end_frame() const { return onset_frame + duration_frames; }
  bool operator==(const NoteEvent&) const = default;
};

/// Random piece on a frame grid: `polyphony` voices, each a diatonic random
/// walk of back-to-back notes, so every frame has at least one sounding note.
std::vector<NoteEvent> generate_piece(std::uint64_t seed, int n_frames, int polyphony);

struct TempoRange {
  double lo = 1.0;
  double hi = 1.0;
};

/// One contiguous stretch of score frames played in the performance, with a
/// piecewise-constant tempo. factor = performance frames per score frame.
struct SegmentInstance {
  int segment = 0;  // index into the score segments (A = 0, B = 1, ...)
  int score_begin = 0;
  int score_end = 0;
  std::vector<int> tempo_breaks;  // score frames where the factor changes, strictly inside
  std::vector<double> factors;    // one per tempo piece
};

struct SegmentPlan {
  std::vector<int> boundaries;  // score segment borders, including 0 and q
  std::vector<SegmentInstance> instances;

  /// e.g. "A B A" for a repeat; "A" for a plain tempo-warped rendition.
  std::string label() const;
};

struct Rendering {
  std::vector<NoteEvent> perf_events;
  AlignmentPath gt_path;
  SegmentPlan plan;
  int perf_frames = 0;
};

/// Renders a performance of the score. Without structure the whole score is
/// played once under a 3-6 piece tempo curve. With structure the score is
/// split at 1-2 boundaries and played in a pattern with one backward jump
/// ("A B A", "A B A B", "A B C B C", "A B A C"), each instance at its own tempo.
Rendering render_performance(const std::vector<NoteEvent>& score_events, std::uint64_t seed, TempoRange tempo,
                             bool structural);

/// Builds the plan used by render_performance; exposed for tests.
SegmentPlan make_segment_plan(int score_frames, std::uint64_t seed, TempoRange tempo, bool structural);

/// Plays `score_events` according to `plan`.
Rendering render_with_plan(const std::vector<NoteEvent>& score_events, const SegmentPlan& plan);

/// n_frames x 12 pitch-class profile, each row L2-normalized.
Matrix chroma_features(const std::vector<NoteEvent>& events, int n_frames);

/// p x q Euclidean distances between performance and score feature rows.
Matrix cross_similarity(const Matrix& perf, const Matrix& score);

struct ResizeMeta {
  std::size_t p = 0;       // original performance frames
  std::size_t q = 0;       // original score frames
  std::size_t L = 0;       // grid size
  double ratio = 1.0;      // grid cells per original frame, (L-1)/(p-1)
  std::size_t score_cols = 0;  // unpadded score columns on the grid
};

struct Resized {
  Matrix matrix;
  ResizeMeta meta;
};

/// Resamples the performance axis to L rows, scales the score axis by the
/// same ratio and pads it to L columns with the matrix maximum.
Resized resize_and_pad(const Matrix& m, std::size_t L);

/// Maps an L-grid path back to the original p performance frames and score
/// units, clamped to [0, q-1].
AlignmentPath rescale_path(std::span<const double> grid_path, const ResizeMeta& meta);

/// Maps an original-frame path onto the L-grid (the inverse of rescale_path).
std::vector<double> path_to_grid(const AlignmentPath& path, const ResizeMeta& meta);

/// Linear interpolation of a sampled sequence at a real position, clamped to the ends.
double interpolate(std::span<const double> values, double position);

}  // namespace scoresync
