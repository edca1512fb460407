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

#include <Eigen/Eigenvalues>

#include "phonoalign/alignment.hpp"
#include "test_support.hpp"

using namespace phonoalign;

namespace {

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Mat random_orthogonal(int d, Rng& rng) {
  Eigen::HouseholderQR<Mat> qr(gaussian(d, d, rng));
  return qr.householderQ() * Mat::Identity(d, d);
}

}  // namespace

TEST_CASE("alignment objective arithmetic") {
  // Three 2-dim pairs, recomputed by hand below.
  Mat a(2, 3), t(2, 3);
  a << 1, 0, 2,
       0, 1, 1;
  t << 0, 1, 1,
       1, 0, 2;
  AlignmentMaps maps;
  maps.at = Mat::Identity(2, 2);
  maps.ta = Mat::Identity(2, 2);
  maps.cycle_weight = 1.0;
  SUBCASE("identity maps") {
    // sum ||t - a||^2 = 2 + 2 + 2 = 6 in each direction; cycles vanish.
    const AlignmentTerms terms = alignment_terms(maps, a, t);
    CHECK(terms.forward_at == doctest::Approx(6.0));
    CHECK(terms.forward_ta == doctest::Approx(6.0));
    CHECK(terms.cycle_audio == 0.0);
    CHECK(terms.cycle_text == 0.0);
    CHECK(terms.total == doctest::Approx(12.0));
  }
  SUBCASE("a swap map with a scaled inverse") {
    maps.at << 0, 1, 1, 0;  // swaps coordinates: M_at a = t exactly
    maps.ta << 0, 2, 2, 0;  // twice the inverse
    // forward_at = 0; M_ta t = 2a so forward_ta = sum ||a||^2 = 1 + 1 + 5 = 7;
    // M_ta M_at = 2I so each cycle term is sum ||x||^2 = 7.
    const AlignmentTerms terms = alignment_terms(maps, a, t);
    CHECK(terms.forward_at == doctest::Approx(0.0));
    CHECK(terms.forward_ta == doctest::Approx(7.0));
    CHECK(terms.cycle_audio == doctest::Approx(7.0));
    CHECK(terms.cycle_text == doctest::Approx(7.0));
    CHECK(terms.total == doctest::Approx(21.0));
    maps.cycle_weight = 0.0;
    CHECK(alignment_objective(maps, a, t) == doctest::Approx(7.0));
  }
  SUBCASE("perfect inverse pair with exact correspondence") {
    maps.at << 0, 1, 1, 0;
    maps.ta << 0, 1, 1, 0;
    const AlignmentTerms terms = alignment_terms(maps, a, t);
    CHECK(terms.total == doctest::Approx(0.0));
  }
}

TEST_CASE("alignment gradient matches central differences") {
  Rng rng(3);
  const Mat a = gaussian(4, 9, rng), t = gaussian(4, 9, rng);
  AlignmentMaps maps;
  maps.at = gaussian(4, 4, rng);
  maps.ta = gaussian(4, 4, rng);
  maps.cycle_weight = 0.7;
  Mat d_at, d_ta;
  alignment_gradient(maps, a, t, &d_at, &d_ta);
  const Real h = 1e-5;
  for (int which = 0; which < 2; ++which) {
    Mat& m = which == 0 ? maps.at : maps.ta;
    const Mat& g = which == 0 ? d_at : d_ta;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const Real orig = m.data()[i];
      m.data()[i] = orig + h;
      const Real up = alignment_objective(maps, a, t);
      m.data()[i] = orig - h;
      const Real down = alignment_objective(maps, a, t);
      m.data()[i] = orig;
      const Real fd = (up - down) / (2 * h);
      CHECK(std::abs(fd - g.data()[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("learned alignment maps") {
  Rng rng(5);
  AlignConfig cfg;
  SUBCASE("identical spaces keep the identity") {
    const Mat a = gaussian(6, 30, rng);
    const AlignResult r = learn_alignment_maps(a, a, cfg);
    CHECK(r.objective.front() == 0.0);
    CHECK(r.maps.at == Mat::Identity(6, 6));
    CHECK(r.maps.ta == Mat::Identity(6, 6));
  }
  SUBCASE("objective at identity is twice the summed pair distance") {
    const Mat a = gaussian(3, 10, rng), t = gaussian(3, 10, rng);
    AlignConfig none = cfg;
    none.steps = 0;
    const AlignResult r = learn_alignment_maps(a, t, none);
    CHECK(r.objective.front() == doctest::Approx(2.0 * (t - a).squaredNorm()).epsilon(1e-12));
  }
  SUBCASE("planted orthogonal transform is recovered") {
    for (int trial = 0; trial < 3; ++trial) {
      const int d = 8;
      const Mat r = random_orthogonal(d, rng);
      const Mat a = gaussian(d, 60, rng);
      const Mat t = r * a;
      const AlignResult res = learn_alignment_maps(a, t, cfg);
      CHECK(!res.diverged);
      CHECK((res.maps.at - r).norm() / r.norm() <= 0.05);
      for (std::size_t k = 1; k < res.objective.size(); ++k) CHECK(res.objective[k] <= res.objective[k - 1]);
    }
  }
  SUBCASE("mismatched inputs") {
    CHECK_THROWS_AS(learn_alignment_maps(Mat::Zero(3, 4), Mat::Zero(2, 4), cfg), Error);
    CHECK_THROWS_AS(learn_alignment_maps(Mat::Zero(3, 4), Mat::Zero(3, 5), cfg), Error);
  }
}

TEST_CASE("PCA projection") {
  Rng rng(7);
  SUBCASE("data inside a d-dim subspace reconstructs exactly") {
    const Mat basis = gaussian(10, 3, rng);
    const Mat x = (basis * gaussian(3, 50, rng)).colwise() + Vec::Constant(10, 2.0);
    const ProjectedSpace s = fit_projection(x, 3);
    CHECK((s.reconstruct(s.project(x)) - x).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s.basis.transpose() * s.basis - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(s.explained_variance_ratio.sum() == doctest::Approx(1.0));
    CHECK_THROWS_WITH_AS(fit_projection(x, 4), doctest::Contains("rank 3"), Error);
  }
  SUBCASE("projected covariance is diagonal and matches a brute-force eigendecomposition") {
    Mat x = gaussian(6, 80, rng);
    x.row(1) += 2.0 * x.row(0);
    x.row(4) *= 3.0;
    const ProjectedSpace s = fit_projection(x, 4);
    const Mat p = s.project(x);
    const Mat centered = p.colwise() - p.rowwise().mean();
    const Mat cov = centered * centered.transpose() / static_cast<Real>(p.cols());
    CHECK((cov - Mat(cov.diagonal().asDiagonal())).cwiseAbs().maxCoeff() < 1e-6);

    // Oracle: correlation matrix by explicit loops, general eigensolver.
    const Eigen::Index n = x.cols();
    Mat corr(6, 6);
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        double mi = 0, mj = 0, sii = 0, sjj = 0, sij = 0;
        for (Eigen::Index k = 0; k < n; ++k) mi += x(i, k), mj += x(j, k);
        mi /= n, mj /= n;
        for (Eigen::Index k = 0; k < n; ++k) {
          sii += (x(i, k) - mi) * (x(i, k) - mi);
          sjj += (x(j, k) - mj) * (x(j, k) - mj);
          sij += (x(i, k) - mi) * (x(j, k) - mj);
        }
        corr(i, j) = sij / std::sqrt(sii * sjj);
      }
    }
    Eigen::EigenSolver<Mat> es(corr);
    std::vector<double> ev;
    for (int i = 0; i < 6; ++i) ev.push_back(es.eigenvalues()(i).real());
    std::sort(ev.rbegin(), ev.rend());
    const double total = std::accumulate(ev.begin(), ev.end(), 0.0);
    for (int k = 0; k < 4; ++k) CHECK(s.explained_variance_ratio(k) == doctest::Approx(ev[static_cast<std::size_t>(k)] / total).epsilon(1e-9));
  }
  SUBCASE("too few vectors") { CHECK_THROWS_AS(fit_projection(gaussian(5, 3, rng), 3), Error); }
}

TEST_CASE("speaker-adversarial critic") {
  Rng rng(9);
  CriticConfig cfg;
  SUBCASE("finite outputs") {
    const Critic c = Critic::create(6, 16, 1);
    const RowVec f = critic_forward(c, gaussian(6, 10, rng), cfg.leak);
    CHECK(f.size() == 10);
    CHECK(f.allFinite());
  }
  SUBCASE("penalty vanishes for unit-norm critic gradients") {
    Critic c(2, 1);
    c.hidden.weight << 1.0, 0.0;
    c.output.weight << 1.0;
    Mat x = Mat::Constant(2, 5, 0.5);
    const auto obj = speaker_adversarial_loss(c, x, x, x, cfg);
    CHECK(obj.gradient_penalty == 0.0);
  }
  SUBCASE("parameter and input gradients match central differences") {
    Critic c = Critic::create(4, 8, 2);
    c.hidden.weight *= 10.0;
    c.output.weight *= 10.0;
    Mat same = gaussian(4, 6, rng), cross = gaussian(4, 6, rng);
    const Mat inter = gaussian(4, 6, rng);
    Critic g = Critic::zeros_like(c);
    Mat d_same, d_cross;
    speaker_adversarial_loss(c, same, cross, inter, cfg, &g, &d_same, &d_cross);
    const Real h = 1e-6;
    auto check_tensor = [&](auto& p, const auto& gp) {
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const Real orig = p.data()[i];
        p.data()[i] = orig + h;
        const Real up = speaker_adversarial_loss(c, same, cross, inter, cfg).critic;
        p.data()[i] = orig - h;
        const Real down = speaker_adversarial_loss(c, same, cross, inter, cfg).critic;
        p.data()[i] = orig;
        const Real fd = (up - down) / (2 * h);
        CHECK(std::abs(fd - gp.data()[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
      }
    };
    check_tensor(c.hidden.weight, g.hidden.weight);
    check_tensor(c.output.weight, g.output.weight);
    check_tensor(c.hidden.bias, g.hidden.bias);
    check_tensor(c.output.bias, g.output.bias);
    auto check_input = [&](Mat& x, const Mat& dx) {
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Real orig = x.data()[i];
        x.data()[i] = orig + h;
        const Real up = speaker_adversarial_loss(c, same, cross, inter, cfg).encoder;
        x.data()[i] = orig - h;
        const Real down = speaker_adversarial_loss(c, same, cross, inter, cfg).encoder;
        x.data()[i] = orig;
        CHECK(std::abs((up - down) / (2 * h) - dx.data()[i]) < 1e-6);
      }
    };
    check_input(same, d_same);
    check_input(cross, d_cross);
  }
  SUBCASE("utterance pair sampling") {
    auto data = testing::tiny_synthetic(4);
    const PairSample s = sample_utterance_pairs(data.train, 50, rng);
    CHECK(s.same.size() == 50);
    CHECK(s.cross.size() == 50);
    for (const auto& [i, j] : s.same) {
      CHECK(i != j);
      CHECK(data.train.spoken[i].utterance_id == data.train.spoken[j].utterance_id);
    }
    for (const auto& [i, j] : s.cross) CHECK(data.train.spoken[i].utterance_id != data.train.spoken[j].utterance_id);
    Corpus singles = data.train;
    for (auto& u : singles.utterances) u.words.resize(1);
    CHECK_THROWS_AS(sample_utterance_pairs(singles, 5, rng), Error);
  }
}

TEST_CASE("separate training and the separate embedding space") {
  auto data = testing::tiny_synthetic(6);
  const Corpus c = apply_cmvn(data.train);
  NetConfig net = testing::small_net(c, 12, 6);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.max_steps = 200;
  cfg.max_epochs = 1000;
  cfg.patience = 1000;
  CriticConfig critic;
  critic.hidden = 16;
  critic.pairs = 8;
  const TrainResult r = train_separate(c, net, cfg, critic);
  REQUIRE(r.history.size() == 200);
  for (const auto& h : r.history) {
    CHECK(h.loss.terms[2] == 0.0);
    CHECK(h.loss.terms[3] == 0.0);
    CHECK(h.loss.terms[4] == 0.0);
    CHECK(h.loss.terms[5] == 0.0);
  }
  auto window = [&](std::size_t from) {
    Real s = 0;
    for (std::size_t i = from; i < from + 20; ++i) s += r.history[i].loss.terms[0];
    return s / 20;
  };
  CHECK(window(180) < window(0));

  const PairSet pairs = build_pair_set(c, c.annotated().size(), 1);
  AlignConfig ac;
  ac.steps = 500;
  const SeparateAlignment al = fit_separate_alignment(r.model, c, pairs, 4, ac);
  for (std::size_t k = 1; k < al.objective.size(); ++k) CHECK(al.objective[k] <= al.objective[k - 1]);
  const SeparateSpace space(r.model, al);
  const TextIndex index = build_text_index(c.lexicon, space);
  CHECK(index.rows.cols() == 4);
  const Vec p = acoustic_posterior(c.spoken[0], index, space);
  CHECK(std::abs(p.sum() - 1.0) < 1e-6);

  const auto dir = testing::scratch_dir("alignment");
  save_alignment(al, dir / "a.bin");
  const SeparateAlignment back = load_alignment(dir / "a.bin");
  CHECK(back.maps.at == al.maps.at);
  CHECK(back.maps.ta == al.maps.ta);
  CHECK(back.audio.basis == al.audio.basis);
  const SeparateSpace back_space(r.model, back);
  CHECK(build_text_index(c.lexicon, back_space).rows == index.rows);
}
