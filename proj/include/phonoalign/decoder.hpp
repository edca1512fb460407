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

#ifndef PHONOALIGN_DECODER_HPP_
#define PHONOALIGN_DECODER_HPP_

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "phonoalign/corpus.hpp"
#include "phonoalign/nets.hpp"

namespace phonoalign {

/// Where phonetic vectors come from. Audio and text vectors returned by one
/// space are directly comparable.
class EmbeddingSpace {
 public:
  virtual ~EmbeddingSpace() = default;
  virtual int dim() const = 0;
  /// One column per spoken word.
  virtual Mat embed_audio(const std::vector<const SpokenWord*>& words) const = 0;
  /// One column per text word.
  virtual Mat embed_text(const std::vector<const TextWord*>& words) const = 0;
};

/// E_p for audio and E_t for text.
class JointSpace : public EmbeddingSpace {
 public:
  explicit JointSpace(const Model& model) : model_(model) {}
  int dim() const override { return model_.config.phonetic_dim; }
  Mat embed_audio(const std::vector<const SpokenWord*>& words) const override;
  Mat embed_text(const std::vector<const TextWord*>& words) const override;

 private:
  const Model& model_;
};

/// Text phonetic vector of every lexicon word, row k for word k.
struct TextIndex {
  Mat rows;  // N x dim
  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
};

TextIndex build_text_index(const Lexicon& lexicon, const EmbeddingSpace& space);

/// log Pr_a(w_k | x) = -d_k^2 - logsumexp(-d^2) for every index row.
Vec log_acoustic_posterior(const Vec& v, const TextIndex& index);
/// Softmax over negative squared distances to the index rows.
Vec acoustic_posterior(const Vec& v, const TextIndex& index);
Vec acoustic_posterior(const SpokenWord& x, const TextIndex& index, const EmbeddingSpace& space);

// ---------------------------------------------------------------------------
// Trigram language model.

/// Backoff trigram over word ids 0..N-1 plus sentence end. Each order keeps
/// (1 - backoff) of the mass of a seen context for its observed successors
/// (relative frequencies) and gives the rest to unseen successors in
/// proportion to the next lower order. The unigram is add-one over the
/// vocabulary and sentence end.
class TrigramLM {
 public:
  static constexpr int kVersion = 1;

  TrigramLM() = default;
  TrigramLM(std::size_t vocab_size, Real backoff);

  std::size_t vocab_size() const { return vocab_; }
  Real backoff() const { return backoff_; }
  /// Sentence-end id; histories use bos() for positions before the start.
  WordId eos() const { return static_cast<WordId>(vocab_); }
  WordId bos() const { return static_cast<WordId>(vocab_ + 1); }

  /// Counts one sentence; call finalize() before querying probabilities.
  void add_sentence(const std::vector<WordId>& words);
  void finalize();
  /// Pr(w | u v) where v is the immediately preceding word.
  Real prob(WordId u, WordId v, WordId w) const;
  Real log_prob(WordId u, WordId v, WordId w) const { return std::log(prob(u, v, w)); }
  /// exp of the mean negative log probability per predicted token, EOS
  /// included.
  Real perplexity(const std::vector<std::vector<WordId>>& sentences) const;

  std::string to_json() const;
  static TrigramLM from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static TrigramLM load(const std::filesystem::path& path);

  bool operator==(const TrigramLM& o) const;

 private:
  using Successors = std::map<WordId, Real>;
  Real unigram(WordId w) const;
  Real bigram(WordId v, WordId w) const;
  struct Context {
    Successors successors;
    Real total = 0.0;
    // Lower-order probability mass of the observed successors.
    Real seen_lower = 0.0;
  };
  Real from_context(const Context& c, WordId w, Real lower) const;

  std::size_t vocab_ = 0;
  Real backoff_ = 0.4;
  std::vector<Real> unigram_counts_;  // vocab + eos
  Real unigram_total_ = 0.0;
  std::map<WordId, Context> bigrams_;
  std::map<std::pair<WordId, WordId>, Context> trigrams_;
  bool finalized_ = false;
};

struct LmConfig {
  Real backoff = 0.4;
};

/// Errors on word ids outside the vocabulary.
TrigramLM train_trigram_lm(const std::vector<std::vector<WordId>>& transcripts, std::size_t vocab_size,
                           const LmConfig& config = {});

// ---------------------------------------------------------------------------
// Beam search.

struct DecodeConfig {
  Real lm_weight = 0.01;  // beta
  int beam_size = 10;
};

struct Hypothesis {
  std::vector<WordId> words;
  Real score = 0.0;
  std::vector<Real> acoustic;  // log Pr_a per word
  std::vector<Real> lm;        // log Pr_LM per word
};

/// `log_posteriors[t]` holds log Pr_a over the N index words for segment t.
Hypothesis beam_search(const std::vector<Vec>& log_posteriors, const TrigramLM& lm, const DecodeConfig& config);

/// Recomputes a hypothesis score term by term.
Real hypothesis_score(const std::vector<WordId>& words, const std::vector<Vec>& log_posteriors,
                      const TrigramLM& lm, Real lm_weight);

Hypothesis beam_search_decode(const std::vector<const SpokenWord*>& utterance, const TextIndex& index,
                              const EmbeddingSpace& space, const TrigramLM& lm, const DecodeConfig& config);

struct UtteranceDecode {
  std::string utterance_id;
  Hypothesis best;
  std::vector<std::string> hypothesis;  // surface forms
  std::vector<std::string> reference;
};

std::vector<UtteranceDecode> decode_corpus(const Corpus& corpus, const Lexicon& lexicon, const EmbeddingSpace& space,
                                           const TrigramLM& lm, const DecodeConfig& config);

/// One JSON object per utterance: utterance_id, hypothesis, reference, score,
/// word_scores (acoustic, lm).
void write_decode_records(const std::vector<UtteranceDecode>& decodes, const std::filesystem::path& path);
std::vector<UtteranceDecode> read_decode_records(const std::filesystem::path& path);

}  // namespace phonoalign

#endif  // PHONOALIGN_DECODER_HPP_
