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

#include "phonoalign/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace phonoalign {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Embeddings and posteriors

Mat JointSpace::embed_audio(const std::vector<const SpokenWord*>& words) const {
  std::vector<const Mat*> frames;
  frames.reserve(words.size());
  for (const SpokenWord* w : words) frames.push_back(&w->frames);
  return encode_audio_phonetic(model_, frames);
}

Mat JointSpace::embed_text(const std::vector<const TextWord*>& words) const {
  std::vector<const std::vector<UnitId>*> units;
  units.reserve(words.size());
  for (const TextWord* w : words) units.push_back(&w->units);
  return encode_text(model_, units);
}

TextIndex build_text_index(const Lexicon& lexicon, const EmbeddingSpace& space) {
  if (lexicon.empty()) throw Error("build_text_index: empty lexicon");
  std::vector<const TextWord*> words;
  for (const TextWord& w : lexicon.words()) words.push_back(&w);
  TextIndex index;
  index.rows = space.embed_text(words).transpose();
  return index;
}

Vec log_acoustic_posterior(const Vec& v, const TextIndex& index) {
  if (index.rows.rows() == 0) throw Error("acoustic posterior: empty index");
  if (v.size() != index.rows.cols()) {
    throw Error("acoustic posterior: vector dim " + std::to_string(v.size()) + " does not match index dim " +
                std::to_string(index.rows.cols()));
  }
  const Vec neg = -(index.rows.rowwise() - v.transpose()).rowwise().squaredNorm();
  const Real m = neg.maxCoeff();
  const Real lse = m + std::log((neg.array() - m).exp().sum());
  return neg.array() - lse;
}

Vec acoustic_posterior(const Vec& v, const TextIndex& index) {
  return log_acoustic_posterior(v, index).array().exp();
}

Vec acoustic_posterior(const SpokenWord& x, const TextIndex& index, const EmbeddingSpace& space) {
  return acoustic_posterior(Vec(space.embed_audio({&x}).col(0)), index);
}

// ---------------------------------------------------------------------------
// Trigram LM

TrigramLM::TrigramLM(std::size_t vocab_size, Real backoff)
    : vocab_(vocab_size), backoff_(backoff), unigram_counts_(vocab_size + 1, 0.0) {
  if (vocab_size == 0) throw Error("language model: empty vocabulary");
  if (!(backoff > 0 && backoff < 1)) throw Error("language model: backoff must lie in (0, 1)");
}

void TrigramLM::add_sentence(const std::vector<WordId>& words) {
  finalized_ = false;
  WordId u = bos(), v = bos();
  auto add = [&](WordId w) {
    unigram_counts_[static_cast<std::size_t>(w)] += 1.0;
    unigram_total_ += 1.0;
    auto& b = bigrams_[v];
    b.successors[w] += 1.0;
    b.total += 1.0;
    auto& t = trigrams_[{u, v}];
    t.successors[w] += 1.0;
    t.total += 1.0;
    u = v;
    v = w;
  };
  for (WordId w : words) {
    if (w < 0 || static_cast<std::size_t>(w) >= vocab_) {
      throw Error("language model: word id " + std::to_string(w) + " outside the vocabulary");
    }
    add(w);
  }
  add(eos());
}

void TrigramLM::finalize() {
  for (auto& [v, c] : bigrams_) {
    c.seen_lower = 0.0;
    for (const auto& [w, n] : c.successors) c.seen_lower += unigram(w);
  }
  finalized_ = true;  // bigram() is valid from here on
  for (auto& [uv, c] : trigrams_) {
    c.seen_lower = 0.0;
    for (const auto& [w, n] : c.successors) c.seen_lower += bigram(uv.second, w);
  }
}

Real TrigramLM::unigram(WordId w) const {
  return (unigram_counts_[static_cast<std::size_t>(w)] + 1.0) / (unigram_total_ + static_cast<Real>(vocab_ + 1));
}

Real TrigramLM::from_context(const Context& c, WordId w, Real lower) const {
  const auto it = c.successors.find(w);
  // A context that has seen every outcome keeps all of its mass.
  if (c.successors.size() == vocab_ + 1) return it->second / c.total;
  if (it != c.successors.end()) return (1.0 - backoff_) * it->second / c.total;
  return backoff_ * lower / (1.0 - c.seen_lower);
}

Real TrigramLM::bigram(WordId v, WordId w) const {
  const Real lower = unigram(w);
  const auto it = bigrams_.find(v);
  return it == bigrams_.end() ? lower : from_context(it->second, w, lower);
}

Real TrigramLM::prob(WordId u, WordId v, WordId w) const {
  if (!finalized_) throw Error("language model queried before finalize()");
  if (w < 0 || w > eos()) throw Error("language model: word id " + std::to_string(w) + " outside the vocabulary");
  const Real lower = bigram(v, w);
  const auto it = trigrams_.find({u, v});
  return it == trigrams_.end() ? lower : from_context(it->second, w, lower);
}

Real TrigramLM::perplexity(const std::vector<std::vector<WordId>>& sentences) const {
  Real nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : sentences) {
    WordId u = bos(), v = bos();
    for (std::size_t i = 0; i <= s.size(); ++i) {
      const WordId w = i < s.size() ? s[i] : eos();
      nll -= log_prob(u, v, w);
      ++n;
      u = v;
      v = w;
    }
  }
  if (n == 0) throw Error("perplexity of an empty set");
  return std::exp(nll / static_cast<Real>(n));
}

std::string TrigramLM::to_json() const {
  json bi = json::array(), tri = json::array();
  for (const auto& [v, c] : bigrams_) {
    for (const auto& [w, n] : c.successors) bi.push_back({v, w, n});
  }
  for (const auto& [uv, c] : trigrams_) {
    for (const auto& [w, n] : c.successors) tri.push_back({uv.first, uv.second, w, n});
  }
  json j = {{"kind", "trigram_lm"},
            {"version", kVersion},
            {"vocab_size", vocab_},
            {"backoff", backoff_},
            {"unigram", unigram_counts_},
            {"bigrams", bi},
            {"trigrams", tri}};
  return j.dump();
}

TrigramLM TrigramLM::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("language model: ") + e.what());
  }
  if (j.value("kind", "") != "trigram_lm") throw Error("not a trigram language model file");
  if (j.value("version", 0) != kVersion) {
    throw Error("language model version " + std::to_string(j.value("version", 0)) + " is not supported");
  }
  TrigramLM lm(j.at("vocab_size").get<std::size_t>(), j.at("backoff").get<Real>());
  lm.unigram_counts_ = j.at("unigram").get<std::vector<Real>>();
  if (lm.unigram_counts_.size() != lm.vocab_ + 1) throw Error("language model: unigram table size mismatch");
  for (Real c : lm.unigram_counts_) lm.unigram_total_ += c;
  for (const auto& e : j.at("bigrams")) {
    auto& c = lm.bigrams_[e.at(0).get<WordId>()];
    c.successors[e.at(1).get<WordId>()] = e.at(2).get<Real>();
    c.total += e.at(2).get<Real>();
  }
  for (const auto& e : j.at("trigrams")) {
    auto& c = lm.trigrams_[{e.at(0).get<WordId>(), e.at(1).get<WordId>()}];
    c.successors[e.at(2).get<WordId>()] = e.at(3).get<Real>();
    c.total += e.at(3).get<Real>();
  }
  lm.finalize();
  return lm;
}

void TrigramLM::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write language model " + path.string());
  out << to_json() << "\n";
}

TrigramLM TrigramLM::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open language model " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

bool TrigramLM::operator==(const TrigramLM& o) const {
  auto same = [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return false;
    for (auto i = a.begin(), k = b.begin(); i != a.end(); ++i, ++k) {
      if (i->first != k->first || i->second.successors != k->second.successors) return false;
    }
    return true;
  };
  return vocab_ == o.vocab_ && backoff_ == o.backoff_ && unigram_counts_ == o.unigram_counts_ &&
         same(bigrams_, o.bigrams_) && same(trigrams_, o.trigrams_);
}

TrigramLM train_trigram_lm(const std::vector<std::vector<WordId>>& transcripts, std::size_t vocab_size,
                           const LmConfig& config) {
  if (transcripts.empty()) throw Error("train_trigram_lm: no transcripts");
  TrigramLM lm(vocab_size, config.backoff);
  for (const auto& t : transcripts) lm.add_sentence(t);
  lm.finalize();
  return lm;
}

// ---------------------------------------------------------------------------
// Beam search

namespace {

struct Candidate {
  std::size_t parent;
  WordId word;
  Real score;
  Real acoustic;
  Real lm;
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.words < b.words;
}

}  // namespace

Hypothesis beam_search(const std::vector<Vec>& log_posteriors, const TrigramLM& lm, const DecodeConfig& config) {
  if (log_posteriors.empty()) throw Error("beam search: empty utterance");
  if (config.beam_size < 1) throw Error("beam search: beam size must be at least 1");
  if (!(config.lm_weight >= 0)) throw Error("beam search: LM weight must be non-negative");
  const Eigen::Index n = log_posteriors[0].size();
  if (static_cast<std::size_t>(n) != lm.vocab_size()) {
    throw Error("beam search: index has " + std::to_string(n) + " words but the language model has " +
                std::to_string(lm.vocab_size()));
  }
  std::vector<Hypothesis> beam(1);
  for (const Vec& lp : log_posteriors) {
    if (lp.size() != n) throw Error("beam search: inconsistent posterior sizes");
    std::vector<Hypothesis> next;
    next.reserve(beam.size() * static_cast<std::size_t>(n));
    for (const Hypothesis& h : beam) {
      const std::size_t len = h.words.size();
      const WordId u = len >= 2 ? h.words[len - 2] : lm.bos();
      const WordId v = len >= 1 ? h.words[len - 1] : lm.bos();
      for (Eigen::Index k = 0; k < n; ++k) {
        const WordId w = static_cast<WordId>(k);
        const Real l = lm.log_prob(u, v, w);
        Hypothesis e = h;
        e.words.push_back(w);
        e.acoustic.push_back(lp(k));
        e.lm.push_back(l);
        e.score = h.score + lp(k) + config.lm_weight * l;
        next.push_back(std::move(e));
      }
    }
    const std::size_t keep = std::min(next.size(), static_cast<std::size_t>(config.beam_size));
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), better);
    next.resize(keep);
    beam = std::move(next);
  }
  return beam.front();
}

Real hypothesis_score(const std::vector<WordId>& words, const std::vector<Vec>& log_posteriors,
                      const TrigramLM& lm, Real lm_weight) {
  if (words.size() != log_posteriors.size()) throw Error("hypothesis_score: length mismatch");
  Real s = 0.0;
  WordId u = lm.bos(), v = lm.bos();
  for (std::size_t t = 0; t < words.size(); ++t) {
    s += log_posteriors[t](words[t]) + lm_weight * lm.log_prob(u, v, words[t]);
    u = v;
    v = words[t];
  }
  return s;
}

Hypothesis beam_search_decode(const std::vector<const SpokenWord*>& utterance, const TextIndex& index,
                              const EmbeddingSpace& space, const TrigramLM& lm, const DecodeConfig& config) {
  if (utterance.empty()) throw Error("beam_search_decode: empty utterance");
  const Mat v = space.embed_audio(utterance);
  std::vector<Vec> lp;
  for (Eigen::Index i = 0; i < v.cols(); ++i) lp.push_back(log_acoustic_posterior(v.col(i), index));
  return beam_search(lp, lm, config);
}

std::vector<UtteranceDecode> decode_corpus(const Corpus& corpus, const Lexicon& lexicon, const EmbeddingSpace& space,
                                           const TrigramLM& lm, const DecodeConfig& config) {
  const TextIndex index = build_text_index(lexicon, space);
  std::vector<UtteranceDecode> out;
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    const Utterance& utt = corpus.utterances[u];
    if (utt.words.empty()) continue;
    std::vector<const SpokenWord*> words;
    for (std::size_t k : utt.words) words.push_back(&corpus.spoken[k]);
    UtteranceDecode d;
    d.utterance_id = utt.id;
    d.best = beam_search_decode(words, index, space, lm, config);
    for (WordId w : d.best.words) d.hypothesis.push_back(lexicon.surface(w));
    d.reference = corpus.reference(u);
    out.push_back(std::move(d));
  }
  return out;
}

void write_decode_records(const std::vector<UtteranceDecode>& decodes, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write decode records " + path.string());
  for (const auto& d : decodes) {
    json scores = json::array();
    for (std::size_t i = 0; i < d.best.words.size(); ++i) {
      scores.push_back({{"acoustic", d.best.acoustic[i]}, {"lm", d.best.lm[i]}});
    }
    out << json{{"utterance_id", d.utterance_id},
                {"hypothesis", d.hypothesis},
                {"reference", d.reference},
                {"word_ids", d.best.words},
                {"score", d.best.score},
                {"word_scores", scores}}
               .dump()
        << "\n";
  }
}

std::vector<UtteranceDecode> read_decode_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open decode records " + path.string());
  std::vector<UtteranceDecode> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      UtteranceDecode d;
      d.utterance_id = j.at("utterance_id").get<std::string>();
      d.hypothesis = j.at("hypothesis").get<std::vector<std::string>>();
      d.reference = j.at("reference").get<std::vector<std::string>>();
      d.best.words = j.value("word_ids", std::vector<WordId>{});
      d.best.score = j.value("score", 0.0);
      if (j.contains("word_scores")) {
        for (const auto& s : j["word_scores"]) {
          d.best.acoustic.push_back(s.at("acoustic").get<Real>());
          d.best.lm.push_back(s.at("lm").get<Real>());
        }
      }
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error(path.string() + " row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace phonoalign
