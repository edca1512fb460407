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

#include "phonoalign/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <Eigen/Eigenvalues>

#include "json.hpp"

namespace phonoalign {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Critic

Critic::Critic(int pair_dim, int hidden_dim) : hidden(pair_dim, hidden_dim), output(hidden_dim, 1) {}

Critic Critic::create(int pair_dim, int hidden_dim, std::uint64_t seed) {
  Critic c(pair_dim, hidden_dim);
  Rng rng(seed);
  nn::init_uniform(c.hidden.weight, Real(0.08), rng);
  nn::init_uniform(c.output.weight, Real(0.08), rng);
  return c;
}

Critic Critic::zeros_like(const Critic& c) { return Critic(c.hidden.in_dim(), c.hidden.out_dim()); }

namespace {

Mat leaky(const Mat& z, Real leak) { return z.array().max(leak * z.array()).matrix(); }
Mat leaky_slope(const Mat& z, Real leak) { return (z.array() > 0).select(Mat::Ones(z.rows(), z.cols()), leak); }

template <typename F>
void critic_tensors(Critic& c, F&& f) {
  f(c.hidden.weight);
  f(c.hidden.bias);
  f(c.output.weight);
  f(c.output.bias);
}

}  // namespace

RowVec critic_forward(const Critic& critic, const Mat& pairs, Real leak) {
  return nn::forward(critic.output, leaky(nn::forward(critic.hidden, pairs), leak));
}

Mat critic_input_gradient(const Critic& critic, const Mat& pairs, Real leak) {
  const Mat slope = leaky_slope(nn::forward(critic.hidden, pairs), leak);
  // Column i: W1^T diag(slope_i) w2.
  const Mat a = slope.array().colwise() * critic.output.weight.row(0).transpose().array();
  return critic.hidden.weight.transpose() * a;
}

AdversarialObjectives speaker_adversarial_loss(const Critic& critic, const Mat& same, const Mat& cross,
                                               const Mat& interpolates, const CriticConfig& config,
                                               Critic* critic_grad, Mat* d_same, Mat* d_cross) {
  if (same.cols() == 0 || cross.cols() == 0) throw Error("speaker_adversarial_loss: empty pair set");
  const Real leak = config.leak;
  const Real ns = static_cast<Real>(same.cols()), nc = static_cast<Real>(cross.cols());
  const Mat z_same = nn::forward(critic.hidden, same);
  const Mat z_cross = nn::forward(critic.hidden, cross);
  const Mat h_same = leaky(z_same, leak), h_cross = leaky(z_cross, leak);
  const RowVec f_same = nn::forward(critic.output, h_same);
  const RowVec f_cross = nn::forward(critic.output, h_cross);

  AdversarialObjectives out;
  out.encoder = f_same.mean() - f_cross.mean();

  const Mat z_int = nn::forward(critic.hidden, interpolates);
  const Mat slope = leaky_slope(z_int, leak);
  const Mat a = slope.array().colwise() * critic.output.weight.row(0).transpose().array();  // H x n
  const Mat g = critic.hidden.weight.transpose() * a;                                        // I x n
  const RowVec norms = g.colwise().norm();
  const Real ni = static_cast<Real>(interpolates.cols());
  out.gradient_penalty = (norms.array() - 1.0).square().sum() / ni;
  out.critic = -out.encoder + config.gp_weight * out.gradient_penalty;

  if (critic_grad) {
    // Wasserstein part: d/d f_same = -1/ns, d/d f_cross = +1/nc.
    auto back = [&](const Mat& x, const Mat& z, const Mat& h, Real coef) {
      const Mat dy = Mat::Constant(1, x.cols(), coef);
      const Mat dh = nn::backward(critic.output, h, dy, critic_grad->output);
      const Mat dz = dh.cwiseProduct(leaky_slope(z, leak));
      nn::backward(critic.hidden, x, dz, critic_grad->hidden);
    };
    back(same, z_same, h_same, -1.0 / ns);
    back(cross, z_cross, h_cross, 1.0 / nc);
    // Penalty part; the slopes are piecewise constant so only W1 and w2
    // receive gradient: d/dW1 = a u^T, d/dw2 = diag(slope) W1 u.
    Mat u(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.cols(); ++i) {
      const Real n = norms(i);
      u.col(i) = n > 0 ? Vec(2.0 * (n - 1.0) / n * g.col(i)) : Vec::Zero(g.rows());
    }
    const Real s = config.gp_weight / ni;
    critic_grad->hidden.weight.noalias() += s * a * u.transpose();
    const Mat w1u = critic.hidden.weight * u;  // H x n
    critic_grad->output.weight.noalias() += s * (slope.cwiseProduct(w1u)).rowwise().sum().transpose();
  }
  if (d_same) *d_same = critic_input_gradient(critic, same, leak) / ns;
  if (d_cross) *d_cross = -critic_input_gradient(critic, cross, leak) / nc;
  return out;
}

PairSample sample_utterance_pairs(const Corpus& corpus, int n, Rng& rng) {
  std::vector<std::size_t> multi;
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    if (corpus.utterances[u].words.size() >= 2) multi.push_back(u);
  }
  if (multi.empty()) throw Error("adversarial pairs: no utterance has two or more words");
  if (corpus.utterances.size() < 2) throw Error("adversarial pairs: need at least two utterances");
  PairSample out;
  for (int k = 0; k < n; ++k) {
    const auto& w = corpus.utterances[multi[uniform_index(rng, multi.size())]].words;
    const std::size_t i = uniform_index(rng, w.size());
    std::size_t j = uniform_index(rng, w.size() - 1);
    if (j >= i) ++j;
    out.same.emplace_back(w[i], w[j]);
  }
  std::vector<std::size_t> nonempty;
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    if (!corpus.utterances[u].words.empty()) nonempty.push_back(u);
  }
  for (int k = 0; k < n; ++k) {
    const std::size_t a = uniform_index(rng, nonempty.size());
    std::size_t b = uniform_index(rng, nonempty.size() - 1);
    if (b >= a) ++b;
    const auto& wa = corpus.utterances[nonempty[a]].words;
    const auto& wb = corpus.utterances[nonempty[b]].words;
    out.cross.emplace_back(wa[uniform_index(rng, wa.size())], wb[uniform_index(rng, wb.size())]);
  }
  return out;
}

namespace {

struct AdversarialState {
  const Corpus* corpus;
  CriticConfig config;
  std::shared_ptr<Critic> critic;
  Critic m, v;
  int t = 0;
  Rng rng;

  void adam_step(const Critic& grad) {
    ++t;
    const Real c1 = 1.0 - std::pow(config.beta1, t), c2 = 1.0 - std::pow(config.beta2, t);
    std::vector<Mat*> p, mm, vv;
    std::vector<const Mat*> g;
    auto collect = [](Critic& c, std::vector<Mat*>& out) {
      out.push_back(&c.hidden.weight);
      out.push_back(&c.output.weight);
    };
    collect(*critic, p);
    collect(m, mm);
    collect(v, vv);
    g = {&grad.hidden.weight, &grad.output.weight};
    for (std::size_t k = 0; k < p.size(); ++k) {
      mm[k]->array() = config.beta1 * mm[k]->array() + (1 - config.beta1) * g[k]->array();
      vv[k]->array() = config.beta2 * vv[k]->array() + (1 - config.beta2) * g[k]->array().square();
      p[k]->array() -= config.learning_rate * (mm[k]->array() / c1) / ((vv[k]->array() / c2).sqrt() + 1e-8);
    }
    // Biases.
    auto bias_step = [&](Vec& pb, Vec& mb, Vec& vb, const Vec& gb) {
      mb.array() = config.beta1 * mb.array() + (1 - config.beta1) * gb.array();
      vb.array() = config.beta2 * vb.array() + (1 - config.beta2) * gb.array().square();
      pb.array() -= config.learning_rate * (mb.array() / c1) / ((vb.array() / c2).sqrt() + 1e-8);
    };
    bias_step(critic->hidden.bias, m.hidden.bias, v.hidden.bias, grad.hidden.bias);
    bias_step(critic->output.bias, m.output.bias, v.output.bias, grad.output.bias);
  }
};

Mat gather_pairs(const Mat& vectors, const std::map<std::size_t, Eigen::Index>& col,
                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const Eigen::Index p = vectors.rows();
  Mat out(2 * p, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) << vectors.col(col.at(pairs[k].first)), vectors.col(col.at(pairs[k].second));
  }
  return out;
}

void scatter_pairs(const Mat& d_pairs, const std::map<std::size_t, Eigen::Index>& col,
                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs, Mat& d_vectors) {
  const Eigen::Index p = d_vectors.rows();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    d_vectors.col(col.at(pairs[k].first)) += d_pairs.col(c).head(p);
    d_vectors.col(col.at(pairs[k].second)) += d_pairs.col(c).tail(p);
  }
}

}  // namespace

StepHook make_adversarial_hook(const Corpus& corpus, const NetConfig& net, const CriticConfig& config,
                               std::uint64_t seed, std::shared_ptr<Critic>* critic_out) {
  if (config.n_critic < 1 || config.pairs < 1 || config.hidden < 1) throw Error("invalid critic config");
  auto state = std::make_shared<AdversarialState>();
  state->corpus = &corpus;
  state->config = config;
  state->critic = std::make_shared<Critic>(Critic::create(2 * net.phonetic_dim, config.hidden, derive_seed(seed, 1)));
  state->m = Critic::zeros_like(*state->critic);
  state->v = Critic::zeros_like(*state->critic);
  state->rng.seed(derive_seed(seed, 2));
  if (critic_out) *critic_out = state->critic;
  return [state](const Model& model, const Batch&, Model& grad, int) -> Real {
    auto& st = *state;
    const PairSample sample = sample_utterance_pairs(*st.corpus, st.config.pairs, st.rng);
    // Encode the union of the sampled words once; the critic steps reuse it.
    std::map<std::size_t, Eigen::Index> col;
    std::vector<const Mat*> frames;
    auto add = [&](std::size_t i) {
      if (col.emplace(i, static_cast<Eigen::Index>(frames.size())).second) frames.push_back(&st.corpus->spoken[i].frames);
    };
    for (const auto& [a, b] : sample.same) add(a), add(b);
    for (const auto& [a, b] : sample.cross) add(a), add(b);
    EncoderCache cache;
    const Mat vectors = encode(model.phonetic_encoder, audio_inputs(frames), &cache);
    const Mat same = gather_pairs(vectors, col, sample.same);
    const Mat cross = gather_pairs(vectors, col, sample.cross);
    auto interpolate = [&]() {
      Mat x(same.rows(), same.cols());
      for (Eigen::Index k = 0; k < same.cols(); ++k) {
        const Real e = uniform01(st.rng);
        x.col(k) = e * same.col(k) + (1.0 - e) * cross.col(k);
      }
      return x;
    };
    for (int k = 0; k < st.config.n_critic; ++k) {
      Critic cg = Critic::zeros_like(*st.critic);
      speaker_adversarial_loss(*st.critic, same, cross, interpolate(), st.config, &cg);
      st.adam_step(cg);
    }
    Mat d_same, d_cross;
    const auto obj = speaker_adversarial_loss(*st.critic, same, cross, interpolate(), st.config, nullptr,
                                              &d_same, &d_cross);
    Mat d_vectors = Mat::Zero(vectors.rows(), vectors.cols());
    scatter_pairs(d_same, col, sample.same, d_vectors);
    scatter_pairs(d_cross, col, sample.cross, d_vectors);
    backward_encode(model.phonetic_encoder, cache, st.config.adversarial_weight * d_vectors, grad.phonetic_encoder,
                    false);
    return st.config.adversarial_weight * obj.encoder;
  };
}

TrainResult train_separate(const Corpus& corpus, const NetConfig& net, const TrainConfig& config,
                           const CriticConfig& critic) {
  TrainConfig c = config;
  c.weights.enabled[static_cast<int>(Term::kCrossAudio)] = false;
  c.weights.enabled[static_cast<int>(Term::kCrossText)] = false;
  c.weights.enabled[static_cast<int>(Term::kCrossEmbedding)] = false;
  c.weights.cycle_enabled = false;
  StepHook hook;
  if (critic.enabled) hook = make_adversarial_hook(corpus, net, critic, derive_seed(config.seed, 11));
  return train_joint(corpus, PairSet{}, net, c, hook);
}

// ---------------------------------------------------------------------------
// Projection

Mat ProjectedSpace::project(const Mat& vectors) const {
  if (vectors.rows() != basis.rows()) throw Error("projection: input dim mismatch");
  const Mat z = (vectors.colwise() - mean).array().colwise() / stddev.array();
  return basis.transpose() * z;
}

Mat ProjectedSpace::reconstruct(const Mat& projected) const {
  const Mat z = basis * projected;
  return (z.array().colwise() * stddev.array()).matrix().colwise() + mean;
}

ProjectedSpace fit_projection(const Mat& vectors, int d) {
  const Eigen::Index p = vectors.rows(), n = vectors.cols();
  if (d < 1 || d > p) throw Error("fit_projection: d=" + std::to_string(d) + " must lie in [1, " + std::to_string(p) + "]");
  if (n < d + 1) {
    throw Error("fit_projection: need at least d+1=" + std::to_string(d + 1) + " vectors, got " + std::to_string(n));
  }
  ProjectedSpace s;
  s.mean = vectors.rowwise().mean();
  const Mat centered = vectors.colwise() - s.mean;
  s.stddev = (centered.array().square().rowwise().sum() / static_cast<Real>(n)).sqrt();
  for (Eigen::Index i = 0; i < p; ++i) {
    if (s.stddev(i) <= 1e-12) s.stddev(i) = 1.0;
  }
  const Mat z = centered.array().colwise() / s.stddev.array();
  const Mat cov = z * z.transpose() / static_cast<Real>(n);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("fit_projection: eigendecomposition failed");
  // Eigenvalues ascend; take the top d in descending order.
  const Vec values = eig.eigenvalues().reverse();
  const Mat vecs = eig.eigenvectors().rowwise().reverse();
  const Real total = values.sum();
  const Real floor = 1e-10 * std::max(values(0), Real(1e-300));
  int rank = 0;
  for (Eigen::Index i = 0; i < p; ++i) rank += values(i) > floor;
  if (rank < d) {
    throw Error("fit_projection: data rank " + std::to_string(rank) + " is below d=" + std::to_string(d) +
                "; use d <= " + std::to_string(rank));
  }
  s.basis = vecs.leftCols(d);
  // Fix signs so the largest-magnitude entry of each component is positive.
  for (int k = 0; k < d; ++k) {
    Eigen::Index arg;
    s.basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (s.basis(arg, k) < 0) s.basis.col(k) *= -1.0;
  }
  s.explained_variance_ratio = values.head(d) / total;
  return s;
}

// ---------------------------------------------------------------------------
// Alignment maps

AlignmentTerms alignment_terms(const AlignmentMaps& maps, const Mat& a, const Mat& t) {
  if (a.cols() != t.cols()) throw Error("alignment: paired point counts differ");
  if (a.rows() != maps.at.cols() || t.rows() != maps.at.rows() || maps.at.rows() != maps.at.cols() ||
      maps.ta.rows() != maps.at.rows() || maps.ta.cols() != maps.at.cols()) {
    throw Error("alignment: dimension mismatch");
  }
  AlignmentTerms out;
  const Mat at_a = maps.at * a, ta_t = maps.ta * t;
  out.forward_at = (t - at_a).squaredNorm();
  out.forward_ta = (a - ta_t).squaredNorm();
  out.cycle_audio = (a - maps.ta * at_a).squaredNorm();
  out.cycle_text = (t - maps.at * ta_t).squaredNorm();
  out.total = out.forward_at + out.forward_ta + maps.cycle_weight * (out.cycle_audio + out.cycle_text);
  return out;
}

Real alignment_objective(const AlignmentMaps& maps, const Mat& a, const Mat& t) {
  return alignment_terms(maps, a, t).total;
}

void alignment_gradient(const AlignmentMaps& maps, const Mat& a, const Mat& t, Mat* d_at, Mat* d_ta) {
  const Real lam = maps.cycle_weight;
  const Mat at_a = maps.at * a, ta_t = maps.ta * t;
  const Mat r1 = at_a - t;                // forward audio -> text residual
  const Mat r2 = ta_t - a;                // forward text -> audio residual
  const Mat c1 = maps.ta * at_a - a;      // audio cycle residual
  const Mat c2 = maps.at * ta_t - t;      // text cycle residual
  *d_at = 2.0 * r1 * a.transpose() + 2.0 * lam * (maps.ta.transpose() * c1 * a.transpose() + c2 * ta_t.transpose());
  *d_ta = 2.0 * r2 * t.transpose() + 2.0 * lam * (c1 * at_a.transpose() + maps.at.transpose() * c2 * t.transpose());
}

AlignResult learn_alignment_maps(const Mat& a, const Mat& t, const AlignConfig& config) {
  if (a.rows() != t.rows()) throw Error("learn_alignment_maps: audio and text dims differ");
  if (a.cols() != t.cols() || a.cols() == 0) throw Error("learn_alignment_maps: need matching, non-empty pairs");
  if (!(config.learning_rate > 0) || config.steps < 0 || config.cycle_weight < 0) {
    throw Error("learn_alignment_maps: invalid config");
  }
  const Eigen::Index d = a.rows();
  AlignResult out;
  out.maps.at = Mat::Identity(d, d);
  out.maps.ta = Mat::Identity(d, d);
  out.maps.cycle_weight = config.cycle_weight;
  Real obj = alignment_objective(out.maps, a, t);
  if (!std::isfinite(obj)) {
    out.diverged = true;
    return out;
  }
  out.objective.push_back(obj);
  Real lr = config.learning_rate;
  int flat = 0;
  Mat d_at, d_ta;
  for (int step = 0; step < config.steps; ++step) {
    alignment_gradient(out.maps, a, t, &d_at, &d_ta);
    if (!d_at.allFinite() || !d_ta.allFinite()) {
      out.diverged = true;
      break;
    }
    bool accepted = false;
    AlignmentMaps trial = out.maps;
    Real trial_obj = obj;
    for (int halving = 0; halving < 60; ++halving) {
      trial.at = out.maps.at - lr * d_at;
      trial.ta = out.maps.ta - lr * d_ta;
      trial_obj = alignment_objective(trial, a, t);
      if (std::isfinite(trial_obj) && trial_obj <= obj) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;  // no descent direction left at machine precision
    const Real improvement = obj - trial_obj;
    out.maps = trial;
    obj = trial_obj;
    out.objective.push_back(obj);
    flat = improvement <= config.tolerance * std::max(obj, Real(1e-300)) ? flat + 1 : 0;
    if (flat >= config.plateau_steps || obj == 0.0) break;
  }
  return out;
}

namespace {

Mat phonetic_vectors(const Model& model, const std::vector<const Mat*>& frames) {
  return encode_audio_phonetic(model, frames);
}

}  // namespace

SeparateAlignment fit_separate_alignment(const Model& model, const Corpus& corpus, const PairSet& pairs, int d,
                                         const AlignConfig& config) {
  if (pairs.empty()) throw Error("fit_separate_alignment: the paired set is empty");
  std::vector<const Mat*> all_frames;
  for (const auto& w : corpus.spoken) all_frames.push_back(&w.frames);
  const Mat audio = phonetic_vectors(model, all_frames);
  std::vector<const std::vector<UnitId>*> all_units;
  for (const auto& w : corpus.lexicon.words()) all_units.push_back(&w.units);
  const Mat text = encode_text(model, all_units);

  SeparateAlignment out;
  out.audio = fit_projection(audio, d);
  out.text = fit_projection(text, d);
  Mat a(audio.rows(), static_cast<Eigen::Index>(pairs.n_paired()));
  Mat t(text.rows(), static_cast<Eigen::Index>(pairs.n_paired()));
  for (std::size_t k = 0; k < pairs.n_paired(); ++k) {
    a.col(static_cast<Eigen::Index>(k)) = audio.col(static_cast<Eigen::Index>(pairs.pairs[k].spoken));
    t.col(static_cast<Eigen::Index>(k)) = text.col(pairs.pairs[k].word);
  }
  AlignResult r = learn_alignment_maps(out.audio.project(a), out.text.project(t), config);
  if (r.diverged) warn("alignment maps diverged; keeping the last finite maps");
  out.maps = r.maps;
  out.objective = std::move(r.objective);
  return out;
}

void save_alignment(const SeparateAlignment& al, const std::filesystem::path& path) {
  TensorFile file;
  file.header = json{{"kind", "alignment"},
                     {"version", 1},
                     {"cycle_weight", al.maps.cycle_weight},
                     {"final_objective", al.objective.empty() ? 0.0 : al.objective.back()}}
                    .dump();
  auto add = [&](const std::string& name, const Mat& m) { file.tensors.emplace_back(name, m); };
  add("audio.mean", al.audio.mean);
  add("audio.stddev", al.audio.stddev);
  add("audio.basis", al.audio.basis);
  add("audio.explained", al.audio.explained_variance_ratio);
  add("text.mean", al.text.mean);
  add("text.stddev", al.text.stddev);
  add("text.basis", al.text.basis);
  add("text.explained", al.text.explained_variance_ratio);
  add("M_at", al.maps.at);
  add("M_ta", al.maps.ta);
  write_tensor_file(path, file);
}

SeparateAlignment load_alignment(const std::filesystem::path& path) {
  const TensorFile file = read_tensor_file(path);
  json header;
  try {
    header = json::parse(file.header);
  } catch (const json::exception& e) {
    throw Error("corrupt alignment file " + path.string() + ": " + e.what());
  }
  if (header.value("kind", "") != "alignment") throw Error(path.string() + " is not an alignment file");
  if (header.value("version", 0) != 1) throw Error(path.string() + ": unsupported alignment version");
  SeparateAlignment al;
  al.audio.mean = file.at("audio.mean");
  al.audio.stddev = file.at("audio.stddev");
  al.audio.basis = file.at("audio.basis");
  al.audio.explained_variance_ratio = file.at("audio.explained");
  al.text.mean = file.at("text.mean");
  al.text.stddev = file.at("text.stddev");
  al.text.basis = file.at("text.basis");
  al.text.explained_variance_ratio = file.at("text.explained");
  al.maps.at = file.at("M_at");
  al.maps.ta = file.at("M_ta");
  al.maps.cycle_weight = header.at("cycle_weight").get<Real>();
  return al;
}

Mat SeparateSpace::embed_audio(const std::vector<const SpokenWord*>& words) const {
  std::vector<const Mat*> frames;
  for (const SpokenWord* w : words) frames.push_back(&w->frames);
  return alignment_.maps.at * alignment_.audio.project(encode_audio_phonetic(model_, frames));
}

Mat SeparateSpace::embed_text(const std::vector<const TextWord*>& words) const {
  std::vector<const std::vector<UnitId>*> units;
  for (const TextWord* w : words) units.push_back(&w->units);
  return alignment_.text.project(encode_text(model_, units));
}

}  // namespace phonoalign
