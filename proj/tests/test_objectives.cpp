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
#include <limits>

#include "phonoalign/objectives.hpp"
#include "test_support.hpp"

using namespace phonoalign;
using phonoalign::testing::check_gradients;

namespace {

Model random_model(const NetConfig& c, std::uint64_t seed, double range = 0.3) {
  Model m = Model::zeros(c);
  Rng rng(seed);
  m.for_each([&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uniform_real(rng, -range, range);
  });
  return m;
}

// A small batch with two negatives per pair, none sharing the anchor's word.
Batch make_batch(const Corpus& c) {
  Batch b;
  b.audio = {0, 3, 7};
  b.text = {1, 4};
  for (std::size_t i : {2u, 5u}) {
    const WordId w = *c.spoken[i].word_id;
    b.paired.push_back(PairItem{i, w});
    std::vector<std::size_t> neg;
    for (std::size_t k = 0; k < c.spoken.size() && neg.size() < 2; ++k) {
      if (c.spoken[k].word_id != w) neg.push_back(k);
    }
    b.negatives.push_back(neg);
  }
  return b;
}

Batch reversed(const Batch& b) {
  Batch r = b;
  std::reverse(r.audio.begin(), r.audio.end());
  std::reverse(r.text.begin(), r.text.end());
  std::reverse(r.paired.begin(), r.paired.end());
  std::reverse(r.negatives.begin(), r.negatives.end());
  for (auto& n : r.negatives) std::reverse(n.begin(), n.end());
  return r;
}

}  // namespace

TEST_CASE("reduction kernels") {
  SUBCASE("mse of one 1-frame 2-dim item") {
    Mat x(1, 2);
    x << 1.0, 0.0;
    CHECK(reconstruction_mse({Mat::Zero(2, 1)}, {&x}) == doctest::Approx(0.5).epsilon(1e-12));
    Mat r = x.transpose();
    CHECK(reconstruction_mse({r}, {&x}) == 0.0);
  }
  SUBCASE("mse is unchanged by duplicating items") {
    Mat a = Mat::Constant(2, 3, 0.7), b = Mat::Constant(1, 3, -0.2);
    std::vector<Mat> single = {Mat::Zero(3, 2), Mat::Zero(3, 2)};
    single[1].col(1).setConstant(0.4);
    const Real v = reconstruction_mse(single, {&a, &b});
    std::vector<Mat> doubled = {Mat::Zero(3, 4), Mat::Zero(3, 4)};
    for (int s = 0; s < 2; ++s) doubled[static_cast<std::size_t>(s)] << single[static_cast<std::size_t>(s)], single[static_cast<std::size_t>(s)];
    CHECK(reconstruction_mse(doubled, {&a, &b, &a, &b}) == doctest::Approx(v).epsilon(1e-12));
  }
  SUBCASE("uniform nll over 4 symbols for 2 steps") {
    const Real v = sequence_nll({Mat::Zero(4, 1), Mat::Zero(4, 1)}, {{2, 3}});
    CHECK(std::abs(v - 2.0 * std::log(4.0)) < 1e-6);
    CHECK(std::abs(v - 2.7726) < 1e-4);
  }
  SUBCASE("uniform nll over 40 units plus EOS for a 1-unit word") {
    Mat first = Mat::Zero(41, 1);
    first(40, 0) = -std::numeric_limits<Real>::infinity();
    const Real v = sequence_nll({first, Mat::Zero(41, 1)}, {{7, 40}});
    CHECK(std::abs(v - (std::log(40.0) + std::log(41.0))) < 1e-6);
    CHECK(std::abs(v - 7.402) < 1e-3);
  }
  SUBCASE("nll is zero under a confident model and decreases with the correct probability") {
    Mat sure = Mat::Constant(3, 1, -1e3);
    sure(1, 0) = 0.0;
    CHECK(sequence_nll({sure}, {{1}}) < 1e-12);
    Mat lo = Mat::Zero(3, 1), hi = Mat::Zero(3, 1);
    hi(1, 0) = 0.5;
    CHECK(sequence_nll({hi}, {{1}}) < sequence_nll({lo}, {{1}}));
  }
  SUBCASE("nll from probabilities agrees with logits") {
    Mat logits(3, 2);
    logits << 0.1, -0.4, 1.2, 0.3, -0.5, 0.9;
    const Mat p = nn::softmax_columns(logits);
    const Real a = sequence_nll({logits.col(0), logits.col(1)}, {{2, 0}});
    const Real b = sequence_nll_from_probs({p}, {{2, 0}});
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
  SUBCASE("hinge arithmetic") {
    CHECK(std::abs(embedding_hinge({0.04}, {0.0025}, 0.01) - 0.0475) < 1e-6);
    CHECK(embedding_hinge({0.0}, {0.01}, 0.01) == 0.0);
    CHECK(embedding_hinge({0.0}, {0.5, 0.02}, 0.01) == 0.0);
  }
  SUBCASE("hinge monotonicity under perturbation") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Real> pos = {uniform01(rng) * 0.05, uniform01(rng) * 0.05};
      std::vector<Real> neg = {uniform01(rng) * 0.02, uniform01(rng) * 0.02, uniform01(rng) * 0.02};
      const Real base = embedding_hinge(pos, neg, 0.01);
      const std::size_t k = uniform_index(rng, 3);
      auto neg_up = neg;
      neg_up[k] += uniform01(rng) * 0.01;
      CHECK(embedding_hinge(pos, neg_up, 0.01) <= base);
      auto pos_up = pos;
      pos_up[k % 2] += uniform01(rng) * 0.01;
      CHECK(embedding_hinge(pos_up, neg, 0.01) >= base);
    }
  }
  SUBCASE("weighted sum") {
    LossWeights w;
    std::array<Real, kNumTerms> ones;
    ones.fill(1.0);
    CHECK(std::abs(weighted_total(ones, w) - 7.4) < 1e-6);
    std::array<Real, kNumTerms> zeros{};
    CHECK(weighted_total(zeros, w) == 0.0);
    w.enabled[static_cast<int>(Term::kCrossText)] = false;
    CHECK(std::abs(weighted_total(ones, w) - 6.4) < 1e-6);
    w.cycle_enabled = true;
    CHECK(std::abs(weighted_total(ones, w) - 7.4) < 1e-6);
  }
}

TEST_CASE("loss weights validation and term names") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.margin = 0.0;
  CHECK_THROWS_AS(w.validate(), Error);
  w = LossWeights{};
  w.enabled.fill(false);
  CHECK_THROWS_AS(w.validate(), Error);
  w.cycle_enabled = true;
  CHECK_NOTHROW(w.validate());
  w = LossWeights{};
  w.alpha[0] = -1.0;
  CHECK_THROWS_AS(w.validate(), Error);
  for (int t = 0; t < kNumTerms; ++t) {
    CHECK(term_from_name(term_name(static_cast<Term>(t))) == static_cast<Term>(t));
    CHECK(term_from_name(std::to_string(t + 1)) == static_cast<Term>(t));
  }
}

TEST_CASE("batch losses") {
  auto data = testing::tiny_synthetic(11);
  const Corpus& c = data.train;
  const NetConfig cfg = testing::small_net(c, 5, 4);
  const Model model = random_model(cfg, 17);
  const Batch batch = make_batch(c);

  SUBCASE("values are finite, non-negative and order invariant") {
    const Batch rev = reversed(batch);
    const Real values[] = {
        intra_audio_recon_loss(model, c, batch), intra_text_recon_loss(model, c, batch),
        cross_audio_recon_loss(model, c, batch), cross_text_recon_loss(model, c, batch),
        cross_embedding_loss(model, c, batch, 0.01), cycle_loss(model, c, batch)};
    const Real rev_values[] = {
        intra_audio_recon_loss(model, c, rev), intra_text_recon_loss(model, c, rev),
        cross_audio_recon_loss(model, c, rev), cross_text_recon_loss(model, c, rev),
        cross_embedding_loss(model, c, rev, 0.01), cycle_loss(model, c, rev)};
    for (int k = 0; k < 6; ++k) {
      CAPTURE(k);
      CHECK(std::isfinite(values[k]));
      CHECK(values[k] >= 0.0);
      CHECK(std::abs(values[k] - rev_values[k]) < 1e-9);
    }
  }
  SUBCASE("empty sets give zero") {
    Batch empty;
    CHECK(intra_audio_recon_loss(model, c, empty) == 0.0);
    CHECK(intra_text_recon_loss(model, c, empty) == 0.0);
    CHECK(cross_audio_recon_loss(model, c, empty) == 0.0);
    CHECK(cross_text_recon_loss(model, c, empty) == 0.0);
    CHECK(cycle_loss(model, c, empty) == 0.0);
  }
  SUBCASE("missing negatives are an error") {
    Batch b = batch;
    b.negatives[1].clear();
    CHECK_THROWS_AS(cross_embedding_loss(model, c, b, 0.01), Error);
    b.negatives.pop_back();
    CHECK_THROWS_AS(cross_embedding_loss(model, c, b, 0.01), Error);
  }
  SUBCASE("cross-text on an untrained model is near uniform") {
    // Zero output layers give uniform distributions: each unit step costs ln S
    // except the first (EOS masked) and the EOS step costs ln(S+1).
    Model flat = model;
    flat.text_decoder.output.weight.setZero();
    flat.text_decoder.output.bias.setZero();
    Batch one;
    one.paired = {batch.paired[0]};
    const auto len = static_cast<Real>(c.lexicon.word(batch.paired[0].word).units.size());
    const Real s = cfg.inventory_size;
    const Real expect = std::log(s) + (len - 1.0) * std::log(s + 1.0) + std::log(s + 1.0);
    CHECK(cross_text_recon_loss(flat, c, one) == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("disabled terms contribute nothing and the breakdown matches the parts") {
    LossWeights w;
    w.cycle_enabled = true;
    w.enabled[static_cast<int>(Term::kIntraAudio)] = false;
    const LossBreakdown br = total_loss(model, c, batch, w);
    CHECK(br.terms[1] == doctest::Approx(intra_text_recon_loss(model, c, batch)));
    CHECK(br.terms[4] == doctest::Approx(cross_embedding_loss(model, c, batch, 0.01)));
    Real expect = 0.0;
    for (int k = 1; k < 5; ++k) expect += w.alpha[static_cast<std::size_t>(k)] * br.terms[static_cast<std::size_t>(k)];
    expect += br.terms[5];
    CHECK(br.total == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients match central differences") {
  auto data = testing::tiny_synthetic(12);
  const Corpus& c = data.train;
  const NetConfig cfg = testing::small_net(c, 16, 8);
  const Model model = random_model(cfg, 5, 0.2);
  const Batch batch = make_batch(c);
  using Fn = std::function<Real(const Model&, Model*)>;
  const std::vector<std::pair<std::string, Fn>> losses = {
      {"intra audio", [&](const Model& m, Model* g) { return intra_audio_recon_loss(m, c, batch, g); }},
      {"intra text", [&](const Model& m, Model* g) { return intra_text_recon_loss(m, c, batch, g); }},
      {"cross audio", [&](const Model& m, Model* g) { return cross_audio_recon_loss(m, c, batch, g); }},
      {"cross text", [&](const Model& m, Model* g) { return cross_text_recon_loss(m, c, batch, g); }},
      // A wide margin keeps the hinge active for the check.
      {"cross embedding", [&](const Model& m, Model* g) { return cross_embedding_loss(m, c, batch, 10.0, g); }},
      {"cycle", [&](const Model& m, Model* g) { return cycle_loss(m, c, batch, CycleGradient::kExact, g); }},
      {"total", [&](const Model& m, Model* g) {
         LossWeights w;
         w.cycle_enabled = true;
         w.cycle_gradient = CycleGradient::kExact;
         return total_loss(m, c, batch, w, g).total;
       }},
  };
  std::uint64_t seed = 1;
  for (const auto& [name, fn] : losses) {
    CAPTURE(name);
    const auto r = check_gradients(model, fn, seed++);
    CAPTURE(r.worst_name);
    CHECK(r.checked == 10);
    CHECK(r.worst_relative < 1e-3);
    CHECK(r.worst_zero_fd < 1e-7);
  }
}

TEST_CASE("straight-through cycle gradient only adds to the inner text path") {
  auto data = testing::tiny_synthetic(13);
  const Corpus& c = data.train;
  const Model model = random_model(testing::small_net(c, 8, 4), 9);
  const Batch batch = make_batch(c);
  Model exact = Model::zeros(model.config), st = Model::zeros(model.config);
  const Real a = cycle_loss(model, c, batch, CycleGradient::kExact, &exact);
  const Real b = cycle_loss(model, c, batch, CycleGradient::kStraightThrough, &st);
  CHECK(a == b);
  CHECK(st.speaker_encoder.projection.weight == exact.speaker_encoder.projection.weight);
  CHECK(st.audio_decoder.output.weight == exact.audio_decoder.output.weight);
  CHECK(st.text_encoder.projection.weight == exact.text_encoder.projection.weight);
  CHECK((st.phonetic_encoder.projection.weight - exact.phonetic_encoder.projection.weight).norm() > 0.0);
  CHECK((st.text_decoder.output.weight - exact.text_decoder.output.weight).norm() > 0.0);
}
