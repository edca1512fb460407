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

#include <algorithm>
#include <fstream>
#include <set>

#include "phonoalign/corpus.hpp"
#include "test_support.hpp"

using namespace phonoalign;
namespace fs = std::filesystem;

namespace {

Corpus one_dim_corpus(const std::vector<std::vector<double>>& words) {
  Corpus c;
  c.lexicon = Lexicon({"a"}, {{"x", {0}}});
  Utterance u{"u0", {}};
  for (std::size_t i = 0; i < words.size(); ++i) {
    SpokenWord w;
    w.frames.resize(static_cast<Eigen::Index>(words[i].size()), 1);
    for (std::size_t t = 0; t < words[i].size(); ++t) w.frames(static_cast<Eigen::Index>(t), 0) = words[i][t];
    w.utterance_id = "u0";
    w.position = static_cast<int>(i);
    u.words.push_back(i);
    c.spoken.push_back(w);
  }
  c.utterances.push_back(u);
  return c;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

}  // namespace

TEST_CASE("cmvn standardizes per utterance") {
  SUBCASE("two frames {1,3} become {-1,+1}") {
    const Corpus out = apply_cmvn(one_dim_corpus({{1.0, 3.0}}));
    CHECK(out.spoken[0].frames(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out.spoken[0].frames(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("statistics span all words of the utterance") {
    const Corpus out = apply_cmvn(one_dim_corpus({{1.0}, {3.0}}));
    CHECK(out.spoken[0].frames(0, 0) == doctest::Approx(-1.0));
    CHECK(out.spoken[1].frames(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("constant dimension becomes zeros") {
    const Corpus out = apply_cmvn(one_dim_corpus({{2.5, 2.5, 2.5}}));
    CHECK(out.spoken[0].frames.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("single frame is mean centered") {
    const Corpus out = apply_cmvn(one_dim_corpus({{4.0}}));
    CHECK(out.spoken[0].frames(0, 0) == 0.0);
  }
  SUBCASE("zero mean, unit variance and idempotence on a synthetic corpus") {
    auto data = testing::tiny_synthetic(3);
    const Corpus once = apply_cmvn(data.train);
    const Corpus twice = apply_cmvn(once);
    for (const auto& utt : once.utterances) {
      Mat all(0, once.feature_dim());
      for (std::size_t k : utt.words) {
        Mat next(all.rows() + once.spoken[k].frames.rows(), all.cols());
        next << all, once.spoken[k].frames;
        all = next;
      }
      const RowVec mean = all.colwise().mean();
      const RowVec var = (all.rowwise() - mean).array().square().colwise().mean();
      CHECK(mean.cwiseAbs().maxCoeff() < 1e-9);
      CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-9);
    }
    for (std::size_t i = 0; i < once.spoken.size(); ++i) {
      CHECK((once.spoken[i].frames - twice.spoken[i].frames).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("manifest loading") {
  const fs::path dir = testing::scratch_dir("manifest");
  const Lexicon lex({"a", "b"}, {{"x", {0, 1}}, {"y", {1}}});
  save_lexicon(lex, dir / "lex.txt");

  SUBCASE("empty manifest") {
    write_text(dir / "m.jsonl", "");
    CHECK_THROWS_WITH_AS(load_corpus(dir / "m.jsonl", dir / "lex.txt"), "empty corpus", Error);
  }
  SUBCASE("three words, two annotated") {
    write_features_binary(dir / "f0.bin", Mat::Ones(3, 4));
    write_features_text(dir / "f1.txt", Mat::Ones(2, 4));
    write_features_binary(dir / "f2.bin", Mat::Zero(5, 4));
    write_text(dir / "m.jsonl",
               R"({"utterance_id":"u","position":0,"features":"f0.bin","word":"x"})" "\n"
               R"({"utterance_id":"u","position":1,"features":"f1.txt"})" "\n"
               R"({"utterance_id":"v","position":0,"features":"f2.bin","word":"y"})" "\n");
    const Corpus c = load_corpus(dir / "m.jsonl", dir / "lex.txt");
    CHECK(c.spoken.size() == 3);
    CHECK(c.annotated().size() == 2);
    CHECK(c.utterances.size() == 2);
    CHECK(c.spoken[2].word_id == WordId{1});
    CHECK(!c.transcript(0).has_value());
    CHECK(c.transcript(1) == std::vector<WordId>{1});
  }
  SUBCASE("dimension mismatch names the row") {
    write_features_binary(dir / "a.bin", Mat::Zero(4, 39));
    write_features_binary(dir / "b.bin", Mat::Zero(4, 13));
    write_text(dir / "m.jsonl",
               R"({"utterance_id":"u","position":0,"features":"a.bin"})" "\n"
               R"({"utterance_id":"u","position":1,"features":"b.bin"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir / "m.jsonl", dir / "lex.txt"),
                         doctest::Contains("row 2: feature dimension mismatch"), Error);
  }
  SUBCASE("missing file and non-finite values carry row context") {
    write_text(dir / "m.jsonl", R"({"utterance_id":"u","position":0,"features":"nope.bin"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir / "m.jsonl", dir / "lex.txt"), doctest::Contains("row 1"), Error);
    write_text(dir / "nan.txt", "1 2\nnan 3\n");
    write_text(dir / "m.jsonl", R"({"utterance_id":"u","position":0,"features":"nan.txt"})" "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir / "m.jsonl", dir / "lex.txt"), doctest::Contains("non-finite"), Error);
  }
  SUBCASE("out-of-lexicon label") {
    write_features_binary(dir / "a.bin", Mat::Zero(2, 3));
    write_text(dir / "m.jsonl", R"({"utterance_id":"u","position":0,"features":"a.bin","word":"zz"})" "\n");
    CHECK_THROWS_AS(load_corpus(dir / "m.jsonl", dir / "lex.txt"), Error);
    LoadOptions opts;
    opts.allow_oov = true;
    const Corpus c = load_corpus(dir / "m.jsonl", dir / "lex.txt", opts);
    CHECK(c.spoken[0].label == std::string("zz"));
    CHECK(!c.spoken[0].word_id.has_value());
    CHECK(c.reference(0) == std::vector<std::string>{"zz"});
  }
}

TEST_CASE("lexicon parsing") {
  const fs::path dir = testing::scratch_dir("lexicon");
  write_text(dir / "ok.txt", "cat\tk ae t\ndog\td ao g\n");
  const Lexicon lex = load_lexicon(dir / "ok.txt");
  CHECK(lex.size() == 2);
  CHECK(lex.inventory_size() == 6);
  CHECK(lex.bos_id() == 6);
  CHECK(lex.max_word_length() == 3);

  write_text(dir / "inv.txt", "#inventory k ae t\ncat\tk ae t\ndog\td ao g\n");
  CHECK_THROWS_WITH_AS(load_lexicon(dir / "inv.txt"), doctest::Contains("unknown subword symbol 'd'"), Error);
  write_text(dir / "dup.txt", "cat\tk ae t\ncat\tk ae\n");
  CHECK_THROWS_AS(load_lexicon(dir / "dup.txt"), Error);
  write_text(dir / "res.txt", "cat\tk </s> t\n");
  CHECK_THROWS_AS(load_lexicon(dir / "res.txt"), Error);

  save_lexicon(lex, dir / "back.txt");
  CHECK(load_lexicon(dir / "back.txt") == lex);
}

TEST_CASE("feature files round trip") {
  const fs::path dir = testing::scratch_dir("features");
  Mat m(3, 2);
  m << 0.1, -2.5, 3.0, 1e-7, 4.25, -0.0;
  write_features_binary(dir / "a.bin", m);
  write_features_text(dir / "a.txt", m);
  const Mat b = read_features(dir / "a.bin");
  const Mat t = read_features(dir / "a.txt");
  CHECK(b == m.cast<float>().cast<double>());
  CHECK(t == b);
}

TEST_CASE("corpus save and load round trip") {
  const fs::path dir = testing::scratch_dir("roundtrip");
  auto data = testing::tiny_synthetic(5);
  save_lexicon(data.train.lexicon, dir / "lex.txt");
  save_corpus(data.train, dir / "m.jsonl", dir / "feats");
  const Corpus a = load_corpus(dir / "m.jsonl", dir / "lex.txt");
  save_corpus(a, dir / "m2.jsonl", dir / "feats2");
  const Corpus b = load_corpus(dir / "m2.jsonl", dir / "lex.txt");
  REQUIRE(a.spoken.size() == data.train.spoken.size());
  REQUIRE(a.spoken.size() == b.spoken.size());
  for (std::size_t i = 0; i < a.spoken.size(); ++i) {
    CHECK(a.spoken[i].frames == b.spoken[i].frames);
    CHECK(a.spoken[i].word_id == b.spoken[i].word_id);
    CHECK(a.spoken[i].utterance_id == data.train.spoken[i].utterance_id);
    CHECK((a.spoken[i].frames - data.train.spoken[i].frames).cwiseAbs().maxCoeff() < 1e-5);
  }
  CHECK(a.transcripts() == data.train.transcripts());
  CHECK(b.transcripts() == a.transcripts());
}

TEST_CASE("pair sets are nested, deterministic and bounded") {
  auto data = testing::tiny_synthetic(6, 8, 2, 5);
  const std::size_t total = data.train.annotated().size();
  REQUIRE(total == 40);
  const PairSet all = build_pair_set(data.train, total, 3);
  std::set<std::size_t> spoken;
  for (const auto& p : all.pairs) {
    spoken.insert(p.spoken);
    CHECK(data.train.spoken[p.spoken].word_id == p.word);
  }
  CHECK(spoken.size() == total);
  CHECK(build_pair_set(data.train, 17, 3).pairs == build_pair_set(data.train, 17, 3).pairs);
  const PairSet small = build_pair_set(data.train, 10, 3);
  const PairSet big = build_pair_set(data.train, 25, 3);
  for (const auto& p : small.pairs) {
    CHECK(std::find(big.pairs.begin(), big.pairs.end(), p) != big.pairs.end());
  }
  CHECK(build_pair_set(data.train, 10, 4).pairs != small.pairs);
  CHECK(build_pair_set(data.train, 0, 3).empty());
  CHECK_THROWS_WITH_AS(build_pair_set(data.train, 41, 3), doctest::Contains("41"), Error);
  CHECK_THROWS_WITH_AS(build_pair_set(data.train, 41, 3), doctest::Contains("40"), Error);
}

TEST_CASE("speech subsampling keeps whole utterances") {
  auto data = testing::tiny_synthetic(7, 10, 2, 6);
  const Corpus& c = data.train;
  const double period = 0.01;
  const double full = c.duration_hours(period);
  const Corpus same = subsample_speech(c, full, period, 1);
  CHECK(same.spoken.size() == c.spoken.size());
  CHECK(same.transcripts() == c.transcripts());

  std::size_t longest = 0;
  for (const auto& u : c.utterances) {
    std::size_t n = 0;
    for (std::size_t k : u.words) n += static_cast<std::size_t>(c.spoken[k].num_frames());
    longest = std::max(longest, n);
  }
  const Corpus half = subsample_speech(c, 0.5 * full, period, 1);
  const double budget_frames = 0.5 * static_cast<double>(c.total_frames());
  CHECK(std::abs(static_cast<double>(half.total_frames()) - budget_frames) <= static_cast<double>(longest));
  CHECK(half.utterances.size() < c.utterances.size());
  for (const auto& u : half.utterances) {
    const auto it = std::find_if(c.utterances.begin(), c.utterances.end(),
                                 [&](const Utterance& o) { return o.id == u.id; });
    REQUIRE(it != c.utterances.end());
    CHECK(it->words.size() == u.words.size());
  }
  CHECK(subsample_speech(c, 0.5 * full, period, 1).transcripts() == half.transcripts());
  CHECK_THROWS_AS(subsample_speech(c, 0.0, period, 1), Error);
  CHECK_THROWS_AS(subsample_speech(c, 2.0 * full, period, 1), Error);
}

TEST_CASE("synthetic corpus construction") {
  SynthSpec spec;
  spec.vocab_size = 10;
  spec.tokens_per_word = 5;
  spec.test_speakers = 0;
  CHECK(generate_synthetic_corpus(spec, 1).spoken.size() == 50);

  SUBCASE("determinism") {
    const Corpus a = generate_synthetic_corpus(spec, 9);
    const Corpus b = generate_synthetic_corpus(spec, 9);
    for (std::size_t i = 0; i < a.spoken.size(); ++i) CHECK(a.spoken[i].frames == b.spoken[i].frames);
  }
  SUBCASE("duplicate pronunciations are rejected") {
    spec.vocab_size = 2;
    spec.word_units = {{0, 1}, {0, 1}};
    CHECK_THROWS_AS(generate_synthetic_corpus(spec, 1), Error);
  }
  SUBCASE("noiseless fixed-duration tokens recover units by nearest prototype") {
    spec.noise = 0.0;
    spec.speakers = 1;
    spec.min_frames_per_unit = spec.max_frames_per_unit = 3;
    const SyntheticCorpus s = generate_synthetic_split(spec, 4);
    const Mat protos = s.prototypes.rowwise() + s.speaker_offsets.row(0);
    std::map<WordId, const Mat*> first;
    for (const auto& w : s.train.spoken) {
      const auto& units = s.train.lexicon.word(*w.word_id).units;
      REQUIRE(w.num_frames() == 3 * static_cast<int>(units.size()));
      for (int t = 0; t < w.num_frames(); ++t) {
        Eigen::Index best;
        (protos.rowwise() - w.frames.row(t)).rowwise().squaredNorm().minCoeff(&best);
        CHECK(best == units[static_cast<std::size_t>(t / 3)]);
      }
      auto [it, inserted] = first.emplace(*w.word_id, &w.frames);
      if (!inserted) CHECK(*it->second == w.frames);
    }
    // Distinct words differ somewhere once aligned by unit.
    for (const auto& [a, fa] : first) {
      for (const auto& [b, fb] : first) {
        if (a >= b) continue;
        const bool same_shape = fa->rows() == fb->rows();
        CHECK((!same_shape || (*fa - *fb).norm() > 0.0));
      }
    }
  }
  SUBCASE("test speakers are disjoint from training speakers") {
    spec.test_speakers = 1;
    const SyntheticCorpus s = generate_synthetic_split(spec, 2);
    std::set<int> train_spk, test_spk;
    for (const auto& w : s.train.spoken) train_spk.insert(*w.speaker);
    for (const auto& w : s.test.spoken) test_spk.insert(*w.speaker);
    CHECK(!test_spk.empty());
    for (int sp : test_spk) CHECK(train_spk.count(sp) == 0);
  }
  SUBCASE("spec json round trip") {
    const fs::path dir = testing::scratch_dir("synthspec");
    spec.word_units.clear();
    save_synth_spec(spec, dir / "s.json");
    const SynthSpec back = load_synth_spec(dir / "s.json");
    CHECK(back.vocab_size == spec.vocab_size);
    CHECK(back.noise == spec.noise);
    CHECK(back.tokens_per_word == spec.tokens_per_word);
  }
}
