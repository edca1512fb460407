// Copyright 2026 The phonoalign Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Evaluation and experiment reproduction: WER scoring, the data-size x N
// spectrum grid, loss ablations, the cycle study, the joint versus separate
// comparison, contour interpolation and result files.

#ifndef PHONOALIGN_HARNESS_HPP_
#define PHONOALIGN_HARNESS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phonoalign/alignment.hpp"
#include "phonoalign/decoder.hpp"
#include "phonoalign/trainer.hpp"

namespace phonoalign {

// ---------------------------------------------------------------------------
// Scoring.

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_words = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  EditCounts& operator+=(const EditCounts& o);
};

/// Minimum edit distance alignment of one hypothesis against its reference.
/// Ties prefer substitution, then deletion, then insertion.
EditCounts align_words(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

/// 100 * (S + I + D) / reference words, with edits summed over utterances.
Real word_error_rate(const std::vector<std::vector<std::string>>& references,
                     const std::vector<std::vector<std::string>>& hypotheses);
Real word_error_rate(const std::vector<UtteranceDecode>& decodes);

// ---------------------------------------------------------------------------
// Experiment configuration.

enum class Strategy { kJoint, kSeparate };
const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct ExperimentConfig {
  NetConfig net;  // feature_dim and inventory_size are taken from the corpus
  TrainConfig train;
  DecodeConfig decode;
  LmConfig lm;
  Strategy strategy = Strategy::kJoint;
  CriticConfig critic;
  AlignConfig align;
  int projection_dim = 0;  // PCA dimension for the separate path; 0 means phonetic_dim
  double frame_period = 0.01;
  bool cmvn = true;

  void validate() const;
  std::string to_json() const;
  /// Keys absent from `text` keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Training corpus (whose transcripts also train the language model) and the
/// held-out test corpus.
struct ExperimentData {
  Corpus train;
  Corpus test;
};

// ---------------------------------------------------------------------------
// Runs and result tables.

struct CellSpec {
  std::string id;
  double hours = 0.0;  // speech kept from the training corpus; 0 keeps all
  std::size_t n_paired = 0;
  std::uint64_t seed = 1;       // recorded seed of the repeat
  std::uint64_t data_seed = 1;  // subsampling and pair selection
  std::uint64_t train_seed = 1;
  ExperimentConfig config;
  std::string dropped_term;  // informational, for ablation rows
};

enum class CellStatus { kOk, kInfeasible, kFailed };
const char* status_name(CellStatus s);

struct ResultRow {
  std::string id;
  double hours = 0.0;
  std::size_t n_paired = 0;
  std::optional<Real> wer;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t train_seed = 0;
  CellStatus status = CellStatus::kOk;
  std::string message;
  int steps = 0;
  double wall_seconds = 0.0;
  std::string dropped_term;
  bool cycle_enabled = false;
  Strategy strategy = Strategy::kJoint;
  std::string config_json;
};

struct ResultTable {
  std::string kind;  // spectrum, ablation, cycle or strategy
  std::vector<ResultRow> rows;

  bool any_failed() const;
};

using RowCallback = std::function<void(const ResultRow&)>;

/// Subsample, select pairs, train, decode the test split and score. Failures
/// are recorded in the row rather than thrown.
ResultRow run_cell(const ExperimentData& data, const CellSpec& cell);

enum class SeedPolicy {
  kPerCell,  // training seed derived from (repeat seed, cell id)
  kShared,   // every cell of a repeat shares one training seed
};

struct ExperimentGrid {
  std::vector<double> hours;
  std::vector<std::size_t> n_paired;
  std::uint64_t seed = 1;
  int repeats = 1;
  SeedPolicy seed_policy = SeedPolicy::kPerCell;

  void validate() const;
};

/// Seed of repeat `r`.
std::uint64_t repeat_seed(std::uint64_t master, int r);
/// Stable 64-bit hash of a cell id.
std::uint64_t cell_hash(const std::string& id);

/// One row per (repeat, hours, N). Cells asking for more pairs than the
/// subsampled corpus annotates are marked infeasible.
ResultTable run_spectrum(const ExperimentData& data, const ExperimentGrid& grid, const ExperimentConfig& config,
                         const RowCallback& on_row = {});

/// The full-loss baseline plus one run per dropped term, sharing seed and
/// data within each repeat.
ResultTable run_ablation(const ExperimentData& data, std::size_t n_paired, const std::vector<Term>& drop,
                         const ExperimentConfig& config, std::uint64_t seed, int repeats = 1,
                         const RowCallback& on_row = {});

/// Cycle off and on for every N.
ResultTable run_cycle_study(const ExperimentData& data, const std::vector<std::size_t>& n_values,
                            const ExperimentConfig& config, std::uint64_t seed, int repeats = 1,
                            const RowCallback& on_row = {});

/// Joint learning and separate learning then transformation at one N.
ResultTable run_strategy_comparison(const ExperimentData& data, std::size_t n_paired, const ExperimentConfig& config,
                                    std::uint64_t seed, int repeats = 1, const RowCallback& on_row = {});

/// Mean WER over the successful rows selected by `keep`; nullopt when none.
std::optional<Real> mean_wer(const ResultTable& table, const std::function<bool(const ResultRow&)>& keep);

// CSV schemas: spectrum hours,n_paired,wer,seed,status; ablation
// dropped_term,n_paired,wer,seed; cycle cycle_enabled,n_paired,wer,seed;
// strategy strategy,n_paired,wer,seed. WER is empty unless the row succeeded.
void write_result_csv(const ResultTable& table, const std::filesystem::path& path);
/// JSON manifest with every row, its seeds, status, timing and full config.
void write_manifest(const ResultTable& table, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Contours.

struct SurfacePoint {
  double hours = 0.0;
  double n_paired = 0.0;
  Real wer = 0.0;
};

/// Piecewise-linear surface over a Delaunay triangulation of the points in
/// (log10 hours, log10 N). Exact at the input points.
class WerSurface {
 public:
  explicit WerSurface(std::vector<SurfacePoint> points);
  /// Interpolated WER, or nullopt outside the convex hull.
  std::optional<Real> operator()(double hours, double n_paired) const;
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<SurfacePoint>& points() const { return points_; }

 private:
  std::vector<SurfacePoint> points_;
  std::vector<std::array<double, 2>> xy_;
  std::vector<std::array<int, 3>> triangles_;
};

/// Delaunay triangulation (Bowyer-Watson) of 2-D points; throws when fewer
/// than 3 distinct points are given or all are collinear.
std::vector<std::array<int, 3>> delaunay(const std::vector<std::array<double, 2>>& xy);

/// Mean WER per (hours, N) over the successful spectrum rows.
std::vector<SurfacePoint> spectrum_points(const ResultTable& table);

struct ContourSample {
  double hours = 0.0;
  double n_paired = 0.0;
  Real wer = 0.0;
};

/// Samples the surface on a resolution x resolution grid, evenly spaced in
/// log10 hours and log10 N over the bounding box; grid nodes outside the
/// convex hull are skipped. Points with zero hours or N have no place on
/// the log axes and are left out.
std::vector<ContourSample> emit_contour(const std::vector<SurfacePoint>& points, int resolution);
/// Columns hours,n_paired,wer_interp.
void write_contour_csv(const std::vector<ContourSample>& samples, const std::filesystem::path& path);

}  // namespace phonoalign

#endif  // PHONOALIGN_HARNESS_HPP_
