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

#ifndef PHONOALIGN_CORPUS_HPP_
#define PHONOALIGN_CORPUS_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "phonoalign/common.hpp"

namespace phonoalign {

/// One segmented spoken word: a T x D matrix of per-frame features.
struct SpokenWord {
  Mat frames;
  std::string utterance_id;
  int position = 0;
  // Surface form of the annotation, kept even when it is outside the
  // lexicon (test references).
  std::optional<std::string> label;
  // Lexicon index of `label`; present only when the label resolves.
  std::optional<WordId> word_id;
  // Known only for synthetic data.
  std::optional<int> speaker;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int feature_dim() const { return static_cast<int>(frames.cols()); }
};

struct TextWord {
  std::vector<UnitId> units;
  WordId word_id = 0;
};

/// Pronunciation lexicon. Unit ids are 0..S-1; the reserved symbols are not
/// part of `inventory` and are addressed through the helpers below.
class Lexicon {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kPad = "<pad>";

  Lexicon() = default;
  Lexicon(std::vector<std::string> inventory,
          std::vector<std::pair<std::string, std::vector<UnitId>>> words);

  std::size_t size() const { return surface_.size(); }
  bool empty() const { return surface_.empty(); }
  int inventory_size() const { return static_cast<int>(inventory_.size()); }
  // Reserved ids, one past the unit range.
  UnitId bos_id() const { return inventory_size(); }
  UnitId eos_id() const { return inventory_size(); }

  const std::string& surface(WordId k) const { return surface_.at(k); }
  const TextWord& word(WordId k) const { return words_.at(k); }
  const std::vector<TextWord>& words() const { return words_; }
  const std::vector<std::string>& inventory() const { return inventory_; }
  std::optional<WordId> find(const std::string& surface) const;
  std::optional<UnitId> find_unit(const std::string& symbol) const;
  int max_word_length() const;

  bool operator==(const Lexicon& other) const;

 private:
  std::vector<std::string> inventory_;
  std::vector<std::string> surface_;
  std::vector<TextWord> words_;
  std::unordered_map<std::string, WordId> index_;
};

struct Utterance {
  std::string id;
  std::vector<std::size_t> words;  // indices into Corpus::spoken, in order
};

struct Corpus {
  std::vector<SpokenWord> spoken;
  Lexicon lexicon;
  std::vector<Utterance> utterances;

  int feature_dim() const;
  std::size_t total_frames() const;
  double duration_hours(double frame_period) const;
  std::vector<std::size_t> annotated() const;
  // Word-id sequence of an utterance; empty when any word lacks a
  // lexicon label.
  std::optional<std::vector<WordId>> transcript(std::size_t utt) const;
  std::vector<std::vector<WordId>> transcripts() const;
  // Surface-form reference, OOV labels included.
  std::vector<std::string> reference(std::size_t utt) const;
};

struct PairItem {
  std::size_t spoken = 0;
  WordId word = 0;

  bool operator==(const PairItem&) const = default;
};

/// The annotated subset Z used by every cross-domain term.
struct PairSet {
  std::vector<PairItem> pairs;

  std::size_t n_paired() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// ---------------------------------------------------------------------------
// Files.

/// Binary feature file: 8-byte magic, u32 rows, u32 cols (little endian),
/// then row-major float32.
inline constexpr char kFeatureMagic[8] = {'P', 'H', 'A', 'F', 'E', 'A', 'T', '1'};

Mat read_features(const std::filesystem::path& path);
void write_features_binary(const std::filesystem::path& path, const Mat& frames);
void write_features_text(const std::filesystem::path& path, const Mat& frames);

Lexicon load_lexicon(const std::filesystem::path& path);
void save_lexicon(const Lexicon& lexicon, const std::filesystem::path& path);

struct LoadOptions {
  // Keep labels that are missing from the lexicon (test sets); otherwise
  // they are an error.
  bool allow_oov = false;
};

/// Manifest: one JSON object per line with utterance_id, position, features
/// (path relative to the manifest) and an optional word label.
Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const std::filesystem::path& lexicon_path,
                   const LoadOptions& options = {});
Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const Lexicon& lexicon, const LoadOptions& options = {});

/// Writes features under `feature_dir` (relative paths in the manifest).
void save_corpus(const Corpus& corpus, const std::filesystem::path& manifest_path,
                 const std::filesystem::path& feature_dir);

// ---------------------------------------------------------------------------
// Transformations.

/// Per-utterance, per-dimension mean/variance normalization over all frames
/// of all words in the utterance.
Corpus apply_cmvn(const Corpus& corpus);

/// Seeded, nested selection of annotated tokens: a fixed permutation of the
/// annotated tokens whose first `n_paired` entries form Z.
PairSet build_pair_set(const Corpus& corpus, std::size_t n_paired,
                       std::uint64_t seed);

/// Keeps whole utterances, in seeded random order, until `hours` of speech
/// are retained.
Corpus subsample_speech(const Corpus& corpus, double hours, double frame_period,
                        std::uint64_t seed);

/// Removes the listed utterances' words, preserving order.
Corpus select_utterances(const Corpus& corpus,
                         const std::vector<std::size_t>& utterances);

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct SynthSpec {
  int vocab_size = 50;
  int inventory_size = 8;
  int min_units = 3;
  int max_units = 5;
  // Optional explicit pronunciations; overrides the random draw.
  std::vector<std::vector<UnitId>> word_units;
  int speakers = 3;
  int test_speakers = 1;
  int tokens_per_word = 20;
  int test_tokens_per_word = 4;
  int min_frames_per_unit = 2;
  int max_frames_per_unit = 4;
  int feature_dim = 8;
  double noise = 0.3;
  double prototype_scale = 1.0;
  double speaker_scale = 0.5;
  int words_per_utterance = 4;
};

struct SyntheticCorpus {
  Corpus train;
  Corpus test;
  Mat prototypes;        // inventory_size x feature_dim
  Mat speaker_offsets;   // (speakers + test_speakers) x feature_dim
};

SyntheticCorpus generate_synthetic_split(const SynthSpec& spec,
                                         std::uint64_t seed);
/// Training side of `generate_synthetic_split`.
Corpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

SynthSpec load_synth_spec(const std::filesystem::path& path);
void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path);

}  // namespace phonoalign

#endif  // PHONOALIGN_CORPUS_HPP_
