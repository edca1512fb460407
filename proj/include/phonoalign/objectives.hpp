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

#ifndef PHONOALIGN_OBJECTIVES_HPP_
#define PHONOALIGN_OBJECTIVES_HPP_

#include <array>
#include <string>
#include <vector>

#include "phonoalign/corpus.hpp"
#include "phonoalign/nets.hpp"

namespace phonoalign {

/// Indices into LossWeights / LossBreakdown, in the order of the joint
/// objective.
enum class Term : int {
  kIntraAudio = 0,
  kIntraText = 1,
  kCrossAudio = 2,
  kCrossText = 3,
  kCrossEmbedding = 4,
  kCycle = 5,
};
inline constexpr int kNumTerms = 6;
const char* term_name(Term t);
Term term_from_name(const std::string& name);

enum class CycleGradient {
  // Greedy symbols are re-encoded with straight-through gradients.
  kStraightThrough,
  // The discrete path contributes no gradient (the true derivative).
  kExact,
};

struct LossWeights {
  // Defaults: (0.2, 1.0, 0.2, 1.0, 5.0) for the five joint terms.
  std::array<Real, 5> alpha{0.2, 1.0, 0.2, 1.0, 5.0};
  std::array<bool, 5> enabled{true, true, true, true, true};
  Real margin = 0.01;  // hinge threshold on squared distance
  Real cycle_weight = 1.0;
  bool cycle_enabled = false;
  CycleGradient cycle_gradient = CycleGradient::kStraightThrough;

  void validate() const;
  bool term_enabled(Term t) const;
  Real weight(Term t) const;
};

/// One training batch; every index refers to the corpus the batch was drawn
/// from.
struct Batch {
  std::vector<std::size_t> audio;
  std::vector<WordId> text;
  std::vector<PairItem> paired;
  std::vector<std::vector<std::size_t>> negatives;  // per paired item
};

struct LossBreakdown {
  std::array<Real, kNumTerms> terms{};
  Real total = 0.0;
};

// ---------------------------------------------------------------------------
// Reduction kernels. Gradients, when requested, are w.r.t. the kernel inputs
// and already include `scale`.

/// Mean over items of the per-item mean (over frames and dims) squared error.
/// `recon` holds D x B per step; `targets[b]` is T_b x D.
Real reconstruction_mse(const std::vector<Mat>& recon, const std::vector<const Mat*>& targets,
                        std::vector<Mat>* d_recon = nullptr, Real scale = 1.0);

/// Mean over items of the summed per-step negative log-likelihood. `logits`
/// holds C x B per step; `targets[b]` lists the symbol per step, EOS
/// included. Steps beyond a target's length are ignored.
Real sequence_nll(const std::vector<Mat>& logits, const std::vector<std::vector<int>>& targets,
                  std::vector<Mat>* d_logits = nullptr, Real scale = 1.0);

/// NLL of given per-step distributions (columns of `probs[b]` are steps).
Real sequence_nll_from_probs(const std::vector<Mat>& probs,
                             const std::vector<std::vector<int>>& targets);

/// mean(positive) + mean(max(0, margin - negative)), both on squared
/// distances; an empty negative list contributes 0.
Real embedding_hinge(const std::vector<Real>& positive_sqdist,
                     const std::vector<Real>& negative_sqdist, Real margin);

/// Sum of weight * term over enabled terms; disabled terms contribute 0.
Real weighted_total(const std::array<Real, kNumTerms>& terms, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Losses over a batch. When `grad` is non-null, scale * d(loss)/d(params) is
// added to it.

Real intra_audio_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                            Model* grad = nullptr, Real scale = 1.0);
Real intra_text_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                           Model* grad = nullptr, Real scale = 1.0);
Real cross_audio_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                            Model* grad = nullptr, Real scale = 1.0);
Real cross_text_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                           Model* grad = nullptr, Real scale = 1.0);
Real cross_embedding_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                          Real margin, Model* grad = nullptr, Real scale = 1.0);
Real cycle_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                CycleGradient mode = CycleGradient::kStraightThrough, Model* grad = nullptr,
                Real scale = 1.0);

LossBreakdown total_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                         const LossWeights& weights, Model* grad = nullptr);

}  // namespace phonoalign

#endif  // PHONOALIGN_OBJECTIVES_HPP_
