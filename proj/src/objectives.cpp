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

#include "phonoalign/objectives.hpp"

#include <atomic>
#include <cmath>

namespace phonoalign {

namespace {

const char* const kTermNames[kNumTerms] = {"intra_audio", "intra_text", "cross_audio",
                                           "cross_text",  "cross_embedding", "cycle"};

void warn_once(Term t, const char* what) {
  static std::atomic<bool> warned[kNumTerms] = {};
  if (!warned[static_cast<int>(t)].exchange(true)) {
    warn(std::string(term_name(t)) + ": " + what + "; term is 0");
  }
}

Mat vstack(const Mat& a, const Mat& b) {
  Mat out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

std::vector<int> with_eos(const std::vector<UnitId>& units, int eos) {
  std::vector<int> out(units.begin(), units.end());
  out.push_back(eos);
  return out;
}

}  // namespace

const char* term_name(Term t) { return kTermNames[static_cast<int>(t)]; }

Term term_from_name(const std::string& name) {
  for (int i = 0; i < kNumTerms; ++i) {
    if (name == kTermNames[i]) return static_cast<Term>(i);
  }
  // Numeric aliases follow the order of the joint objective (1-based).
  if (name.size() == 1 && name[0] >= '1' && name[0] <= '6') return static_cast<Term>(name[0] - '1');
  throw Error("unknown loss term '" + name + "'");
}

void LossWeights::validate() const {
  bool any = cycle_enabled;
  for (int i = 0; i < 5; ++i) {
    if (alpha[static_cast<std::size_t>(i)] < 0) throw Error("loss weights must be non-negative");
    any = any || enabled[static_cast<std::size_t>(i)];
  }
  if (cycle_weight < 0) throw Error("cycle weight must be non-negative");
  if (!any) throw Error("at least one loss term must be enabled");
  if (!(margin > 0)) throw Error("hinge margin must be positive");
}

bool LossWeights::term_enabled(Term t) const {
  if (t == Term::kCycle) return cycle_enabled;
  return enabled[static_cast<std::size_t>(t)];
}

Real LossWeights::weight(Term t) const {
  if (t == Term::kCycle) return cycle_weight;
  return alpha[static_cast<std::size_t>(t)];
}

// ---------------------------------------------------------------------------
// Kernels

Real reconstruction_mse(const std::vector<Mat>& recon, const std::vector<const Mat*>& targets,
                        std::vector<Mat>* d_recon, Real scale) {
  const auto batch = static_cast<Eigen::Index>(targets.size());
  if (batch == 0) return 0.0;
  const Eigen::Index d = targets.front()->cols();
  if (d_recon) d_recon->assign(recon.size(), Mat::Zero(d, batch));
  Real total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Mat& x = *targets[static_cast<std::size_t>(b)];
    if (static_cast<std::size_t>(x.rows()) > recon.size()) throw Error("reconstruction shorter than target");
    const Real denom = static_cast<Real>(x.rows() * d);
    Real item = 0.0;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      const Vec diff = recon[static_cast<std::size_t>(t)].col(b) - x.row(t).transpose();
      item += diff.squaredNorm();
      if (d_recon) (*d_recon)[static_cast<std::size_t>(t)].col(b) = (2.0 * scale / (denom * static_cast<Real>(batch))) * diff;
    }
    total += item / denom;
  }
  return total / static_cast<Real>(batch);
}

Real sequence_nll(const std::vector<Mat>& logits, const std::vector<std::vector<int>>& targets,
                  std::vector<Mat>* d_logits, Real scale) {
  const auto batch = static_cast<Eigen::Index>(targets.size());
  if (batch == 0) return 0.0;
  if (d_logits) {
    d_logits->clear();
    for (const Mat& lg : logits) d_logits->push_back(Mat::Zero(lg.rows(), lg.cols()));
  }
  Real total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& y = targets[static_cast<std::size_t>(b)];
    if (y.size() > logits.size()) throw Error("sequence_nll: fewer steps than target symbols");
    for (std::size_t t = 0; t < y.size(); ++t) {
      const auto col = logits[t].col(b);
      const Real m = col.maxCoeff();
      const Vec e = (col.array() - m).exp().matrix();
      const Real z = e.sum();
      total += -(col(y[t]) - m - std::log(z));
      if (d_logits) {
        Vec g = e / z;
        g(y[t]) -= 1.0;
        (*d_logits)[t].col(b) = (scale / static_cast<Real>(batch)) * g;
      }
    }
  }
  return total / static_cast<Real>(batch);
}

Real sequence_nll_from_probs(const std::vector<Mat>& probs, const std::vector<std::vector<int>>& targets) {
  if (targets.empty()) return 0.0;
  Real total = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    for (std::size_t t = 0; t < targets[b].size(); ++t) {
      total -= std::log(probs[b](targets[b][t], static_cast<Eigen::Index>(t)));
    }
  }
  return total / static_cast<Real>(targets.size());
}

Real embedding_hinge(const std::vector<Real>& positive_sqdist, const std::vector<Real>& negative_sqdist,
                     Real margin) {
  Real pos = 0.0, neg = 0.0;
  for (Real d : positive_sqdist) pos += d;
  for (Real d : negative_sqdist) neg += std::max(Real(0), margin - d);
  if (!positive_sqdist.empty()) pos /= static_cast<Real>(positive_sqdist.size());
  if (!negative_sqdist.empty()) neg /= static_cast<Real>(negative_sqdist.size());
  return pos + neg;
}

Real weighted_total(const std::array<Real, kNumTerms>& terms, const LossWeights& w) {
  Real total = 0.0;
  for (int i = 0; i < kNumTerms; ++i) {
    const auto t = static_cast<Term>(i);
    if (w.term_enabled(t)) total += w.weight(t) * terms[static_cast<std::size_t>(i)];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

std::vector<const Mat*> frames_of(const Corpus& corpus, const std::vector<std::size_t>& idx) {
  std::vector<const Mat*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(&corpus.spoken.at(i).frames);
  return out;
}

std::vector<const std::vector<UnitId>*> units_of(const Corpus& corpus, const std::vector<WordId>& ids) {
  std::vector<const std::vector<UnitId>*> out;
  out.reserve(ids.size());
  for (WordId k : ids) out.push_back(&corpus.lexicon.word(k).units);
  return out;
}

std::vector<std::vector<int>> eos_targets(const std::vector<const std::vector<UnitId>*>& units, int eos) {
  std::vector<std::vector<int>> out;
  out.reserve(units.size());
  for (const auto* u : units) out.push_back(with_eos(*u, eos));
  return out;
}

std::vector<std::size_t> paired_spoken(const Batch& b) {
  std::vector<std::size_t> out;
  for (const auto& p : b.paired) out.push_back(p.spoken);
  return out;
}

std::vector<WordId> paired_words(const Batch& b) {
  std::vector<WordId> out;
  for (const auto& p : b.paired) out.push_back(p.word);
  return out;
}

// Encodes text sequences and backpropagates into E_t and the embedding table.
struct TextEncoding {
  std::vector<const std::vector<UnitId>*> units;
  EncoderCache cache;
  Mat vectors;

  void run(const Model& model, std::vector<const std::vector<UnitId>*> u, bool keep) {
    units = std::move(u);
    vectors = encode(model.text_encoder, text_inputs(model, units), keep ? &cache : nullptr);
  }
  std::vector<Mat> backward(const Model& model, const Mat& d_vectors, Model& grad) const {
    std::vector<Mat> d_in = backward_encode(model.text_encoder, cache, d_vectors, grad.text_encoder, true);
    accumulate_text_input_grad(d_in, units, grad.embedding);
    return d_in;
  }
};

}  // namespace

Real intra_audio_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch, Model* grad,
                            Real scale) {
  if (batch.audio.empty()) {
    warn_once(Term::kIntraAudio, "no audio items");
    return 0.0;
  }
  const auto frames = frames_of(corpus, batch.audio);
  const SequenceBatch in = audio_inputs(frames);
  EncoderCache cp, cs;
  const Mat vp = encode(model.phonetic_encoder, in, grad ? &cp : nullptr);
  const Mat vs = encode(model.speaker_encoder, in, grad ? &cs : nullptr);
  AudioDecoderCache dc;
  const auto recon = run_audio_decoder(model.audio_decoder, vstack(vp, vs), in.max_length(), grad ? &dc : nullptr);
  std::vector<Mat> d_recon;
  const Real value = reconstruction_mse(recon, frames, grad ? &d_recon : nullptr, scale);
  if (grad) {
    const Mat d_cond = backward_audio_decoder(model.audio_decoder, dc, d_recon, grad->audio_decoder);
    const int p = model.config.phonetic_dim;
    backward_encode(model.phonetic_encoder, cp, d_cond.topRows(p), grad->phonetic_encoder, false);
    backward_encode(model.speaker_encoder, cs, d_cond.bottomRows(d_cond.rows() - p), grad->speaker_encoder, false);
  }
  return value;
}

Real intra_text_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch, Model* grad,
                           Real scale) {
  if (batch.text.empty()) {
    warn_once(Term::kIntraText, "no text items");
    return 0.0;
  }
  TextEncoding te;
  te.run(model, units_of(corpus, batch.text), grad != nullptr);
  TextDecoderCache tdc;
  const auto logits = run_text_decoder_teacher(model, te.vectors, te.units, grad ? &tdc : nullptr);
  std::vector<Mat> d_logits;
  const Real value = sequence_nll(logits, eos_targets(te.units, model.config.inventory_size),
                                  grad ? &d_logits : nullptr, scale);
  if (grad) {
    const Mat d_cond = backward_text_decoder(model, tdc, d_logits, *grad);
    te.backward(model, d_cond, *grad);
  }
  return value;
}

Real cross_audio_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch, Model* grad,
                            Real scale) {
  if (batch.paired.empty()) {
    warn_once(Term::kCrossAudio, "no paired items");
    return 0.0;
  }
  const auto frames = frames_of(corpus, paired_spoken(batch));
  const SequenceBatch in = audio_inputs(frames);
  TextEncoding te;
  te.run(model, units_of(corpus, paired_words(batch)), grad != nullptr);
  EncoderCache cs;
  const Mat vs = encode(model.speaker_encoder, in, grad ? &cs : nullptr);
  AudioDecoderCache dc;
  const auto recon = run_audio_decoder(model.audio_decoder, vstack(te.vectors, vs), in.max_length(),
                                       grad ? &dc : nullptr);
  std::vector<Mat> d_recon;
  const Real value = reconstruction_mse(recon, frames, grad ? &d_recon : nullptr, scale);
  if (grad) {
    const Mat d_cond = backward_audio_decoder(model.audio_decoder, dc, d_recon, grad->audio_decoder);
    const int p = model.config.phonetic_dim;
    te.backward(model, d_cond.topRows(p), *grad);
    backward_encode(model.speaker_encoder, cs, d_cond.bottomRows(d_cond.rows() - p), grad->speaker_encoder, false);
  }
  return value;
}

Real cross_text_recon_loss(const Model& model, const Corpus& corpus, const Batch& batch, Model* grad,
                           Real scale) {
  if (batch.paired.empty()) {
    warn_once(Term::kCrossText, "no paired items");
    return 0.0;
  }
  const auto frames = frames_of(corpus, paired_spoken(batch));
  const auto units = units_of(corpus, paired_words(batch));
  EncoderCache cp;
  const Mat vp = encode(model.phonetic_encoder, audio_inputs(frames), grad ? &cp : nullptr);
  TextDecoderCache tdc;
  const auto logits = run_text_decoder_teacher(model, vp, units, grad ? &tdc : nullptr);
  std::vector<Mat> d_logits;
  const Real value = sequence_nll(logits, eos_targets(units, model.config.inventory_size),
                                  grad ? &d_logits : nullptr, scale);
  if (grad) {
    const Mat d_vp = backward_text_decoder(model, tdc, d_logits, *grad);
    backward_encode(model.phonetic_encoder, cp, d_vp, grad->phonetic_encoder, false);
  }
  return value;
}

Real cross_embedding_loss(const Model& model, const Corpus& corpus, const Batch& batch, Real margin,
                          Model* grad, Real scale) {
  if (batch.paired.empty()) {
    warn_once(Term::kCrossEmbedding, "no paired items");
    return 0.0;
  }
  if (batch.negatives.size() != batch.paired.size()) throw Error("cross_embedding_loss: negatives missing for some pairs");
  const std::size_t n_pairs = batch.paired.size();
  std::vector<std::size_t> spoken = paired_spoken(batch);
  std::vector<std::size_t> neg_anchor;
  for (std::size_t j = 0; j < n_pairs; ++j) {
    if (batch.negatives[j].empty()) throw Error("cross_embedding_loss: pair without negative samples");
    for (std::size_t i : batch.negatives[j]) {
      spoken.push_back(i);
      neg_anchor.push_back(j);
    }
  }
  EncoderCache cp;
  const Mat va = encode(model.phonetic_encoder, audio_inputs(frames_of(corpus, spoken)), grad ? &cp : nullptr);
  TextEncoding te;
  te.run(model, units_of(corpus, paired_words(batch)), grad != nullptr);
  const Mat& vt = te.vectors;

  const std::size_t n_neg = neg_anchor.size();
  std::vector<Real> pos(n_pairs), neg(n_neg);
  for (std::size_t j = 0; j < n_pairs; ++j) {
    pos[j] = (va.col(static_cast<Eigen::Index>(j)) - vt.col(static_cast<Eigen::Index>(j))).squaredNorm();
  }
  for (std::size_t k = 0; k < n_neg; ++k) {
    neg[k] = (va.col(static_cast<Eigen::Index>(n_pairs + k)) - vt.col(static_cast<Eigen::Index>(neg_anchor[k]))).squaredNorm();
  }
  const Real value = embedding_hinge(pos, neg, margin);
  if (grad) {
    Mat d_va = Mat::Zero(va.rows(), va.cols());
    Mat d_vt = Mat::Zero(vt.rows(), vt.cols());
    const Real wp = 2.0 * scale / static_cast<Real>(n_pairs);
    for (std::size_t j = 0; j < n_pairs; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      const Vec diff = va.col(c) - vt.col(c);
      d_va.col(c) += wp * diff;
      d_vt.col(c) -= wp * diff;
    }
    const Real wn = 2.0 * scale / static_cast<Real>(n_neg);
    for (std::size_t k = 0; k < n_neg; ++k) {
      if (margin - neg[k] <= 0) continue;
      const auto c = static_cast<Eigen::Index>(n_pairs + k);
      const auto a = static_cast<Eigen::Index>(neg_anchor[k]);
      const Vec diff = va.col(c) - vt.col(a);
      d_va.col(c) -= wn * diff;
      d_vt.col(a) += wn * diff;
    }
    backward_encode(model.phonetic_encoder, cp, d_va, grad->phonetic_encoder, false);
    te.backward(model, d_vt, *grad);
  }
  return value;
}

Real cycle_loss(const Model& model, const Corpus& corpus, const Batch& batch, CycleGradient mode,
                Model* grad, Real scale) {
  if (batch.paired.empty()) {
    warn_once(Term::kCycle, "no paired items");
    return 0.0;
  }
  const int p = model.config.phonetic_dim;
  const int s = model.config.inventory_size;
  const auto frames = frames_of(corpus, paired_spoken(batch));
  const auto words = units_of(corpus, paired_words(batch));
  const SequenceBatch in = audio_inputs(frames);
  const int t_max = in.max_length();

  EncoderCache cs;
  const Mat vs = encode(model.speaker_encoder, in, grad ? &cs : nullptr);

  // Audio cycle: x -> E_p -> D_t (greedy) -> E_t -> D_a(., E_s(x)).
  EncoderCache cp1;
  const Mat vp = encode(model.phonetic_encoder, in, grad ? &cp1 : nullptr);
  TextDecoderCache tdc1;
  const int max_len = corpus.lexicon.max_word_length() + 3;
  GreedyDecode greedy = run_text_decoder_greedy(model, vp, max_len, grad ? &tdc1 : nullptr);
  std::vector<const std::vector<UnitId>*> greedy_units;
  for (const auto& u : greedy.units) greedy_units.push_back(&u);
  TextEncoding te1;
  te1.run(model, greedy_units, grad != nullptr);
  AudioDecoderCache adc1;
  const auto recon = run_audio_decoder(model.audio_decoder, vstack(te1.vectors, vs), t_max, grad ? &adc1 : nullptr);
  std::vector<Mat> d_recon;
  const Real audio_term = reconstruction_mse(recon, frames, grad ? &d_recon : nullptr, scale);

  // Text cycle: y -> E_t -> D_a(., E_s(x)) -> E_p -> D_t (teacher forced on y).
  TextEncoding te2;
  te2.run(model, words, grad != nullptr);
  AudioDecoderCache adc2;
  SequenceBatch generated;
  generated.steps = run_audio_decoder(model.audio_decoder, vstack(te2.vectors, vs), t_max, grad ? &adc2 : nullptr);
  generated.lengths = in.lengths;
  EncoderCache cp2;
  const Mat vp2 = encode(model.phonetic_encoder, generated, grad ? &cp2 : nullptr);
  TextDecoderCache tdc2;
  const auto logits = run_text_decoder_teacher(model, vp2, words, grad ? &tdc2 : nullptr);
  std::vector<Mat> d_logits;
  const Real text_term = sequence_nll(logits, eos_targets(words, s), grad ? &d_logits : nullptr, scale);

  if (grad) {
    Mat d_vs = Mat::Zero(vs.rows(), vs.cols());

    const Mat d_vp2 = backward_text_decoder(model, tdc2, d_logits, *grad);
    const std::vector<Mat> d_generated =
        backward_encode(model.phonetic_encoder, cp2, d_vp2, grad->phonetic_encoder, true);
    const Mat d_cond2 = backward_audio_decoder(model.audio_decoder, adc2, d_generated, grad->audio_decoder);
    te2.backward(model, d_cond2.topRows(p), *grad);
    d_vs += d_cond2.bottomRows(d_cond2.rows() - p);

    const Mat d_cond1 = backward_audio_decoder(model.audio_decoder, adc1, d_recon, grad->audio_decoder);
    d_vs += d_cond1.bottomRows(d_cond1.rows() - p);
    const std::vector<Mat> d_units_in = te1.backward(model, d_cond1.topRows(p), *grad);
    if (mode == CycleGradient::kStraightThrough) {
      // d(loss)/d(one-hot) is taken as d(loss)/d(probabilities) of the step
      // that emitted the unit, then mapped through the softmax.
      std::vector<Mat> d_greedy_logits;
      for (const Mat& lg : greedy.logits) d_greedy_logits.push_back(Mat::Zero(lg.rows(), lg.cols()));
      const auto unit_table = model.embedding.leftCols(s);
      for (std::size_t b = 0; b < greedy.units.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        for (std::size_t t = 0; t < greedy.units[b].size(); ++t) {
          Vec g = Vec::Zero(s + 1);
          g.head(s) = unit_table.transpose() * d_units_in[t].col(col);
          const Mat probs = nn::softmax_columns<Real>(Mat(greedy.logits[t].col(col)));
          const Vec pr = probs.col(0);
          d_greedy_logits[t].col(col) = (pr.array() * (g.array() - pr.dot(g))).matrix();
        }
      }
      const Mat d_vp = backward_text_decoder(model, tdc1, d_greedy_logits, *grad);
      backward_encode(model.phonetic_encoder, cp1, d_vp, grad->phonetic_encoder, false);
    }
    backward_encode(model.speaker_encoder, cs, d_vs, grad->speaker_encoder, false);
  }
  return audio_term + text_term;
}

LossBreakdown total_loss(const Model& model, const Corpus& corpus, const Batch& batch,
                         const LossWeights& w, Model* grad) {
  w.validate();
  LossBreakdown out;
  auto run = [&](Term t, auto&& fn) {
    if (!w.term_enabled(t)) return;
    out.terms[static_cast<std::size_t>(t)] = fn(w.weight(t));
  };
  run(Term::kIntraAudio, [&](Real a) { return intra_audio_recon_loss(model, corpus, batch, grad, a); });
  run(Term::kIntraText, [&](Real a) { return intra_text_recon_loss(model, corpus, batch, grad, a); });
  run(Term::kCrossAudio, [&](Real a) { return cross_audio_recon_loss(model, corpus, batch, grad, a); });
  run(Term::kCrossText, [&](Real a) { return cross_text_recon_loss(model, corpus, batch, grad, a); });
  run(Term::kCrossEmbedding,
      [&](Real a) { return cross_embedding_loss(model, corpus, batch, w.margin, grad, a); });
  run(Term::kCycle, [&](Real a) { return cycle_loss(model, corpus, batch, w.cycle_gradient, grad, a); });
  out.total = weighted_total(out.terms, w);
  return out;
}

}  // namespace phonoalign
