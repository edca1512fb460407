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

// Separate learning then transformation: independently trained audio and
// text autoencoders, a speaker-adversarial critic on the audio side, PCA
// projection of both phonetic spaces and a pair of learned linear maps.

#ifndef PHONOALIGN_ALIGNMENT_HPP_
#define PHONOALIGN_ALIGNMENT_HPP_

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "phonoalign/decoder.hpp"
#include "phonoalign/nn/linear.hpp"
#include "phonoalign/trainer.hpp"

namespace phonoalign {

// ---------------------------------------------------------------------------
// Speaker-adversarial critic.

struct CriticConfig {
  bool enabled = true;
  int hidden = 256;
  int n_critic = 5;
  Real gp_weight = 10.0;
  Real learning_rate = 1e-4;
  Real beta1 = 0.5;
  Real beta2 = 0.9;
  Real adversarial_weight = 1.0;  // scale of the encoder-side term
  int pairs = 32;                 // same- and cross-utterance pairs per step
  Real leak = 0.2;
};

/// Two-layer fully connected critic on concatenated phonetic-vector pairs.
struct Critic {
  nn::Linear<Real> hidden;
  nn::Linear<Real> output;

  Critic() = default;
  Critic(int pair_dim, int hidden_dim);
  static Critic create(int pair_dim, int hidden_dim, std::uint64_t seed);
  static Critic zeros_like(const Critic& c);
};

/// Critic scores, one per column of `pairs`.
RowVec critic_forward(const Critic& critic, const Mat& pairs, Real leak);
/// d f(x) / d x for every column.
Mat critic_input_gradient(const Critic& critic, const Mat& pairs, Real leak);

struct AdversarialObjectives {
  Real critic = 0.0;           // -(mean f(same) - mean f(cross)) + gp * penalty
  Real encoder = 0.0;          // mean f(same) - mean f(cross)
  Real gradient_penalty = 0.0; // mean (||grad f(interp)|| - 1)^2
};

/// Evaluates both objectives. When `critic_grad` is non-null, adds the
/// gradient of the critic objective w.r.t. critic parameters. When
/// `d_same`/`d_cross` are non-null, they receive the gradient of the encoder
/// objective w.r.t. the pair inputs.
AdversarialObjectives speaker_adversarial_loss(const Critic& critic, const Mat& same, const Mat& cross,
                                               const Mat& interpolates, const CriticConfig& config,
                                               Critic* critic_grad = nullptr, Mat* d_same = nullptr,
                                               Mat* d_cross = nullptr);

/// Same-utterance and cross-utterance spoken-word index pairs. Utterances
/// with a single word never contribute same-utterance pairs.
struct PairSample {
  std::vector<std::pair<std::size_t, std::size_t>> same;
  std::vector<std::pair<std::size_t, std::size_t>> cross;
};
PairSample sample_utterance_pairs(const Corpus& corpus, int n, Rng& rng);

/// Builds a trainer hook that runs n_critic critic updates and then adds the
/// adversarial encoder gradient to E_p.
StepHook make_adversarial_hook(const Corpus& corpus, const NetConfig& net, const CriticConfig& config,
                               std::uint64_t seed, std::shared_ptr<Critic>* critic_out = nullptr);

/// Trains the two autoencoders with the intra-domain terms only, plus the
/// speaker-adversarial term when enabled.
TrainResult train_separate(const Corpus& corpus, const NetConfig& net, const TrainConfig& config,
                           const CriticConfig& critic = {});

// ---------------------------------------------------------------------------
// Projection.

struct ProjectedSpace {
  Vec mean;    // P
  Vec stddev;  // P, 1 where a dimension is constant
  Mat basis;   // P x d, orthonormal columns
  Vec explained_variance_ratio;  // d

  int input_dim() const { return static_cast<int>(basis.rows()); }
  int dim() const { return static_cast<int>(basis.cols()); }
  /// d x n projections of P x n vectors.
  Mat project(const Mat& vectors) const;
  /// Maps projections back to the input space.
  Mat reconstruct(const Mat& projected) const;
};

/// Standardizes each dimension and keeps the top-d principal components of
/// `vectors` (P x n).
ProjectedSpace fit_projection(const Mat& vectors, int d);

// ---------------------------------------------------------------------------
// Linear alignment maps.

struct AlignmentMaps {
  Mat at;  // audio -> text
  Mat ta;  // text -> audio
  Real cycle_weight = 1.0;
};

struct AlignmentTerms {
  Real forward_at = 0.0;  // sum ||t - M_at a||^2
  Real forward_ta = 0.0;  // sum ||a - M_ta t||^2
  Real cycle_audio = 0.0; // sum ||a - M_ta M_at a||^2
  Real cycle_text = 0.0;  // sum ||t - M_at M_ta t||^2
  Real total = 0.0;
};

/// Columns of `a` and `t` are paired points.
AlignmentTerms alignment_terms(const AlignmentMaps& maps, const Mat& a, const Mat& t);
Real alignment_objective(const AlignmentMaps& maps, const Mat& a, const Mat& t);
/// Gradients of the objective w.r.t. M_at and M_ta.
void alignment_gradient(const AlignmentMaps& maps, const Mat& a, const Mat& t, Mat* d_at, Mat* d_ta);

struct AlignConfig {
  Real cycle_weight = 1.0;
  Real learning_rate = 1e-3;
  int steps = 5000;
  // Stop once the relative improvement stays below `tolerance` for
  // `plateau_steps` consecutive steps.
  Real tolerance = 1e-12;
  int plateau_steps = 50;
};

struct AlignResult {
  AlignmentMaps maps;
  std::vector<Real> objective;  // per accepted iterate, starting at identity
  bool diverged = false;
};

/// Gradient descent from identity maps. A step that would raise the objective
/// is retried with half the learning rate, so the iterates never increase it.
AlignResult learn_alignment_maps(const Mat& a, const Mat& t, const AlignConfig& config);

/// Separate path end to end: project E_p(x) and E_t(y) of the pairs and
/// learn the maps.
struct SeparateAlignment {
  ProjectedSpace audio;
  ProjectedSpace text;
  AlignmentMaps maps;
  std::vector<Real> objective;
};

SeparateAlignment fit_separate_alignment(const Model& model, const Corpus& corpus, const PairSet& pairs, int d,
                                         const AlignConfig& config);

void save_alignment(const SeparateAlignment& alignment, const std::filesystem::path& path);
SeparateAlignment load_alignment(const std::filesystem::path& path);

/// Audio: M_at * proj_A(E_p(x)); text: proj_T(E_t(y)).
class SeparateSpace : public EmbeddingSpace {
 public:
  SeparateSpace(const Model& model, const SeparateAlignment& alignment) : model_(model), alignment_(alignment) {}
  int dim() const override { return alignment_.text.dim(); }
  Mat embed_audio(const std::vector<const SpokenWord*>& words) const override;
  Mat embed_text(const std::vector<const TextWord*>& words) const override;

 private:
  const Model& model_;
  const SeparateAlignment& alignment_;
};

}  // namespace phonoalign

#endif  // PHONOALIGN_ALIGNMENT_HPP_
