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

#ifndef PHONOALIGN_TRAINER_HPP_
#define PHONOALIGN_TRAINER_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "phonoalign/corpus.hpp"
#include "phonoalign/nets.hpp"
#include "phonoalign/objectives.hpp"

namespace phonoalign {

struct TrainConfig {
  Real learning_rate = 1e-4;
  int batch_size = 32;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
  int max_epochs = 100;
  // Steps per epoch; 0 means ceil(#spoken words / batch_size).
  int steps_per_epoch = 0;
  // Hard cap on optimizer steps; 0 means unlimited.
  int max_steps = 0;
  // Early stopping on validation loss, counted in epochs.
  int patience = 10;
  Real validation_fraction = 0.1;
  // Upper bound on validation pairs and on audio/text validation items.
  int max_validation_items = 128;
  int negatives_per_pair = 1;
  Real clip_norm = 5.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  LossWeights weights;
  std::filesystem::path log_path;         // JSONL run log, optional
  std::filesystem::path checkpoint_path;  // best checkpoint, optional

  void validate() const;
  // JSON object text; unknown keys are rejected.
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct StepRecord {
  int step = 0;
  LossBreakdown loss;
  Real extra = 0.0;  // value returned by the step hook, if any
  Real grad_norm = 0.0;
};

struct ValidationRecord {
  int step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct TrainResult {
  Model model;  // best-validation parameters
  std::vector<StepRecord> history;
  std::vector<ValidationRecord> validation;
  int best_step = 0;
  Real best_validation = 0.0;
  int steps = 0;
  bool diverged = false;
  bool early_stopped = false;
};

/// Uniform draws, rejection-sampled, of `k` spoken words that are not
/// annotated with `anchor`. Unlabeled words are eligible.
std::vector<std::size_t> sample_negatives(const Corpus& corpus, WordId anchor, int k, Rng& rng);

/// Independent random streams for the three item kinds, so that the draws of
/// one kind do not depend on the size of another's pool.
struct BatchRngs {
  Rng audio;
  Rng text;
  Rng paired;
  explicit BatchRngs(std::uint64_t seed);
};

/// Audio items uniform over all spoken words, text items uniform over the
/// lexicon, paired items uniform over `pairs`, each with negatives.
Batch sample_batch(const Corpus& corpus, const PairSet& pairs, int size, int negatives_per_pair,
                   BatchRngs& rngs);

/// Splits Z by token into (training, validation).
std::pair<PairSet, PairSet> split_validation(const PairSet& pairs, Real fraction, std::uint64_t seed);

/// Extra differentiable term added to every step (e.g. an adversarial
/// penalty). Adds its gradient to `grad` and returns its value.
using StepHook = std::function<Real(const Model& model, const Batch& batch, Model& grad, int step)>;

class Adam {
 public:
  Adam(const Model& like, Real lr, Real beta1, Real beta2, Real epsilon);
  void step(Model& params, const Model& grad);
  int steps() const { return t_; }

 private:
  Model m_, v_;
  Real lr_, beta1_, beta2_, epsilon_;
  int t_ = 0;
};

/// L2 norm over every parameter tensor.
Real global_norm(const Model& grad);
/// Scales `grad` so that its global norm is at most `max_norm`; returns the
/// norm before scaling.
Real clip_global_norm(Model& grad, Real max_norm);

TrainResult train_joint(const Corpus& corpus, const PairSet& pairs, const NetConfig& net,
                        const TrainConfig& config, const StepHook& hook = {});

}  // namespace phonoalign

#endif  // PHONOALIGN_TRAINER_HPP_
