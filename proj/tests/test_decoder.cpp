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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "phonoalign/decoder.hpp"
#include "test_support.hpp"

using namespace phonoalign;

namespace {

// Independent backoff trigram used as a counting oracle.
struct OracleLM {
  int v;  // vocabulary size; v is EOS, v+1 is BOS
  double d;
  std::map<std::vector<int>, double> count;  // n-grams of length 1..3 and their histories

  OracleLM(const std::vector<std::vector<WordId>>& sents, int vocab, double backoff) : v(vocab), d(backoff) {
    for (const auto& s : sents) {
      std::vector<int> seq = {v + 1, v + 1};
      for (WordId w : s) seq.push_back(w);
      seq.push_back(v);
      for (std::size_t i = 2; i < seq.size(); ++i) {
        count[{seq[i]}] += 1;
        count[{-1}] += 1;  // unigram total
        count[{seq[i - 1], seq[i]}] += 1;
        count[{seq[i - 1], -1}] += 1;  // bigram history total
        count[{seq[i - 2], seq[i - 1], seq[i]}] += 1;
        count[{seq[i - 2], seq[i - 1], -1}] += 1;
      }
    }
  }
  double c(const std::vector<int>& k) const {
    auto it = count.find(k);
    return it == count.end() ? 0.0 : it->second;
  }
  double p1(int w) const { return (c({w}) + 1.0) / (c({-1}) + v + 1.0); }
  double p2(int h, int w) const {
    const double total = c({h, -1});
    if (total == 0) return p1(w);
    double seen = 0;
    int n_seen = 0;
    for (int x = 0; x <= v; ++x) {
      if (c({h, x}) > 0) {
        seen += p1(x);
        ++n_seen;
      }
    }
    if (n_seen == v + 1) return c({h, w}) / total;
    if (c({h, w}) > 0) return (1 - d) * c({h, w}) / total;
    return d * p1(w) / (1 - seen);
  }
  double p3(int u, int h, int w) const {
    const double total = c({u, h, -1});
    if (total == 0) return p2(h, w);
    double seen = 0;
    int n_seen = 0;
    for (int x = 0; x <= v; ++x) {
      if (c({u, h, x}) > 0) {
        seen += p2(h, x);
        ++n_seen;
      }
    }
    if (n_seen == v + 1) return c({u, h, w}) / total;
    if (c({u, h, w}) > 0) return (1 - d) * c({u, h, w}) / total;
    return d * p2(h, w) / (1 - seen);
  }
};

std::vector<std::vector<WordId>> random_sentences(Rng& rng, int vocab, int n, int max_len) {
  std::vector<std::vector<WordId>> out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    const int len = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_len)));
    for (int i = 0; i < len; ++i) s.push_back(static_cast<WordId>(uniform_index(rng, static_cast<std::size_t>(vocab))));
  }
  return out;
}

std::vector<Vec> random_log_posteriors(Rng& rng, int n, int t) {
  std::vector<Vec> out;
  for (int i = 0; i < t; ++i) {
    Vec d(n);
    for (int k = 0; k < n; ++k) d(k) = 3.0 * uniform01(rng);
    TextIndex index;
    index.rows = Mat::Zero(n, 1);
    index.rows.col(0) = d.cwiseSqrt();
    out.push_back(log_acoustic_posterior(Vec::Zero(1), index));
  }
  return out;
}

}  // namespace

TEST_CASE("acoustic posterior") {
  TextIndex index;
  index.rows = Mat::Zero(2, 2);
  index.rows(1, 0) = 1.0;
  SUBCASE("squared distances 0 and 1") {
    const Vec p = acoustic_posterior(Vec::Zero(2), index);
    CHECK(std::abs(p(0) - std::exp(0.0) / (1.0 + std::exp(-1.0))) < 1e-12);
    CHECK(std::abs(p(0) - 0.7311) < 1e-4);
    CHECK(std::abs(p(1) - 0.2689) < 1e-4);
  }
  SUBCASE("equidistant rows split evenly") {
    Vec v(2);
    v << 0.5, 0.0;
    const Vec p = acoustic_posterior(v, index);
    CHECK(p(0) == doctest::Approx(0.5));
    CHECK(p(1) == doctest::Approx(0.5));
  }
  SUBCASE("single row") {
    TextIndex one;
    one.rows = Mat::Constant(1, 3, 4.0);
    CHECK(acoustic_posterior(Vec::Zero(3), one)(0) == 1.0);
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(acoustic_posterior(Vec::Zero(3), index), Error); }
  SUBCASE("normalization and nearest-row argmax on random inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      TextIndex idx;
      idx.rows = Mat(7, 4);
      for (Eigen::Index i = 0; i < idx.rows.size(); ++i) idx.rows.data()[i] = 3.0 * standard_normal(rng);
      Vec v(4);
      for (int i = 0; i < 4; ++i) v(i) = 3.0 * standard_normal(rng);
      const Vec p = acoustic_posterior(v, idx);
      CHECK(std::abs(p.sum() - 1.0) < 1e-6);
      CHECK(p.minCoeff() >= 0.0);
      Eigen::Index a, b;
      p.maxCoeff(&a);
      (idx.rows.rowwise() - v.transpose()).rowwise().squaredNorm().minCoeff(&b);
      CHECK(a == b);
    }
  }
}

TEST_CASE("text index") {
  auto data = testing::tiny_synthetic(2);
  const Model m = Model::create(testing::small_net(data.train), 3);
  const JointSpace space(m);
  const TextIndex a = build_text_index(data.train.lexicon, space);
  CHECK(a.size() == data.train.lexicon.size());
  CHECK(a.rows == build_text_index(data.train.lexicon, space).rows);
  for (WordId k = 0; k < static_cast<WordId>(a.size()); ++k) {
    CHECK(a.rows.row(k).transpose() == encode_text(m, data.train.lexicon.word(k)));
  }
  const Lexicon one({"p0", "p1", "p2", "p3", "p4"}, {{"w", {1, 2}}});
  CHECK(build_text_index(one, space).size() == 1);
  CHECK_THROWS_AS(build_text_index(Lexicon(), space), Error);
}

TEST_CASE("trigram language model") {
  SUBCASE("single sentence dominates its context") {
    const TrigramLM lm = train_trigram_lm({{0, 1}}, 3);
    const WordId bos = lm.bos();
    for (WordId w = 0; w <= lm.eos(); ++w) {
      if (w != 1) CHECK(lm.prob(bos, 0, 1) > lm.prob(bos, 0, w));
    }
  }
  SUBCASE("every context is normalized") {
    Rng rng(5);
    const int v = 6;
    const TrigramLM lm = train_trigram_lm(random_sentences(rng, v, 30, 5), v);
    std::vector<WordId> hist;
    for (WordId w = 0; w < v; ++w) hist.push_back(w);
    hist.push_back(lm.bos());
    for (WordId u : hist) {
      for (WordId h : hist) {
        if (h == lm.bos() && u != lm.bos()) continue;
        Real s = 0.0;
        for (WordId w = 0; w <= lm.eos(); ++w) s += lm.prob(u, h, w);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
  SUBCASE("matches an independent counting oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      const int v = 4 + trial;
      const auto sents = random_sentences(rng, v, 25, 6);
      const TrigramLM lm = train_trigram_lm(sents, static_cast<std::size_t>(v));
      const OracleLM oracle(sents, v, 0.4);
      double nll = 0;
      int n = 0;
      for (const auto& s : sents) {
        int u = v + 1, h = v + 1;
        for (std::size_t i = 0; i <= s.size(); ++i) {
          const int w = i < s.size() ? s[i] : v;
          CHECK(lm.prob(u, h, w) == doctest::Approx(oracle.p3(u, h, w)).epsilon(1e-12));
          nll -= std::log(oracle.p3(u, h, w));
          ++n;
          u = h;
          h = w;
        }
      }
      CHECK(lm.perplexity(sents) == doctest::Approx(std::exp(nll / n)).epsilon(1e-10));
      for (int u = 0; u <= v + 1; ++u) {
        for (int h = 0; h <= v + 1; ++h) {
          if (h == v || u == v) continue;
          for (int w = 0; w <= v; ++w) CHECK(lm.prob(u, h, w) == doctest::Approx(oracle.p3(u, h, w)).epsilon(1e-12));
        }
      }
    }
  }
  SUBCASE("invariant to transcript order") {
    Rng rng(7);
    auto sents = random_sentences(rng, 5, 20, 4);
    const TrigramLM a = train_trigram_lm(sents, 5);
    std::reverse(sents.begin(), sents.end());
    const TrigramLM b = train_trigram_lm(sents, 5);
    CHECK(a == b);
    CHECK(a.prob(1, 2, 3) == b.prob(1, 2, 3));
  }
  SUBCASE("serialization round trip") {
    Rng rng(8);
    const auto sents = random_sentences(rng, 5, 20, 4);
    const TrigramLM a = train_trigram_lm(sents, 5);
    const auto dir = testing::scratch_dir("lm");
    a.save(dir / "lm.json");
    const TrigramLM b = TrigramLM::load(dir / "lm.json");
    CHECK(a == b);
    CHECK(a.perplexity(sents) == b.perplexity(sents));
  }
  SUBCASE("out-of-vocabulary transcripts") {
    CHECK_THROWS_AS(train_trigram_lm({{0, 5}}, 3), Error);
    CHECK_THROWS_AS(train_trigram_lm({}, 3), Error);
  }
}

TEST_CASE("beam search") {
  Rng rng(9);
  SUBCASE("no LM weight gives per-segment argmax") {
    const TrigramLM lm = train_trigram_lm(random_sentences(rng, 5, 10, 4), 5);
    for (int trial = 0; trial < 50; ++trial) {
      const auto lp = random_log_posteriors(rng, 5, 4);
      DecodeConfig cfg;
      cfg.lm_weight = 0.0;
      cfg.beam_size = 1 + trial % 4;
      const Hypothesis h = beam_search(lp, lm, cfg);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        Eigen::Index arg;
        lp[t].maxCoeff(&arg);
        CHECK(h.words[t] == arg);
      }
    }
  }
  SUBCASE("score is recomputable term by term") {
    const TrigramLM lm = train_trigram_lm(random_sentences(rng, 5, 10, 4), 5);
    for (int trial = 0; trial < 50; ++trial) {
      const auto lp = random_log_posteriors(rng, 5, 5);
      DecodeConfig cfg;
      cfg.lm_weight = 0.7;
      const Hypothesis h = beam_search(lp, lm, cfg);
      CHECK(h.score == doctest::Approx(hypothesis_score(h.words, lp, lm, 0.7)).epsilon(1e-12));
      Real acoustic = 0, lmsum = 0;
      for (std::size_t t = 0; t < h.words.size(); ++t) {
        acoustic += h.acoustic[t];
        lmsum += h.lm[t];
      }
      CHECK(h.score == doctest::Approx(acoustic + 0.7 * lmsum).epsilon(1e-12));
    }
  }
  SUBCASE("unpruned beam equals exhaustive search") {
    const TrigramLM lm = train_trigram_lm(random_sentences(rng, 3, 8, 3), 3);
    for (int trial = 0; trial < 100; ++trial) {
      const auto lp = random_log_posteriors(rng, 3, 3);
      DecodeConfig cfg;
      cfg.lm_weight = 1.0;
      cfg.beam_size = 27;
      const Hypothesis h = beam_search(lp, lm, cfg);
      Real best = -1e300;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          for (int c = 0; c < 3; ++c) best = std::max(best, hypothesis_score({a, b, c}, lp, lm, 1.0));
      CHECK(h.score == doctest::Approx(best).epsilon(1e-12));
    }
  }
  SUBCASE("an unpruned beam scores at least as high as any pruned beam") {
    const TrigramLM lm = train_trigram_lm(random_sentences(rng, 4, 8, 3), 4);
    for (int trial = 0; trial < 100; ++trial) {
      const auto lp = random_log_posteriors(rng, 4, 3);
      DecodeConfig cfg;
      cfg.lm_weight = 0.5;
      cfg.beam_size = 64;
      const Real full = beam_search(lp, lm, cfg).score;
      for (int b = 1; b < 64; b += 7) {
        cfg.beam_size = b;
        CHECK(beam_search(lp, lm, cfg).score <= full + 1e-12);
      }
    }
  }
  SUBCASE("input validation") {
    const TrigramLM lm = train_trigram_lm({{0}}, 3);
    DecodeConfig cfg;
    CHECK_THROWS_AS(beam_search({}, lm, cfg), Error);
    CHECK_THROWS_AS(beam_search({Vec::Zero(4)}, lm, cfg), Error);
    cfg.beam_size = 0;
    CHECK_THROWS_AS(beam_search({Vec::Zero(3)}, lm, cfg), Error);
  }
  SUBCASE("default beam size and LM weight") {
    DecodeConfig cfg;
    CHECK(cfg.beam_size == 10);
    CHECK(cfg.lm_weight == 0.01);
  }
}

TEST_CASE("decoding a corpus and writing records") {
  auto data = testing::tiny_synthetic(10);
  const Model m = Model::create(testing::small_net(data.train), 3);
  const JointSpace space(m);
  const TrigramLM lm = train_trigram_lm(data.train.transcripts(), data.train.lexicon.size());
  const auto decodes = decode_corpus(data.test, data.train.lexicon, space, lm, DecodeConfig{});
  CHECK(decodes.size() == data.test.utterances.size());
  for (std::size_t i = 0; i < decodes.size(); ++i) {
    CHECK(decodes[i].hypothesis.size() == data.test.utterances[i].words.size());
    CHECK(decodes[i].reference == data.test.reference(i));
  }
  const auto dir = testing::scratch_dir("decode");
  write_decode_records(decodes, dir / "d.jsonl");
  const auto back = read_decode_records(dir / "d.jsonl");
  REQUIRE(back.size() == decodes.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].hypothesis == decodes[i].hypothesis);
    CHECK(back[i].best.words == decodes[i].best.words);
    CHECK(back[i].best.score == decodes[i].best.score);
  }
}
