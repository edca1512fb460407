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

#include "phonoalign/nets.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"

namespace phonoalign {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void NetConfig::validate() const {
  if (feature_dim < 1 || inventory_size < 1 || encoder_hidden < 1 ||
      audio_decoder_hidden < 1 || text_decoder_hidden < 1 || phonetic_dim < 1 ||
      speaker_dim < 1 || embed_dim < 1) {
    throw Error("net config: all sizes must be >= 1");
  }
  if (layers < 1 || layers > 3) throw Error("net config: layers must be 1, 2 or 3");
}

std::string NetConfig::to_json() const {
  json j = {{"feature_dim", feature_dim},
            {"inventory_size", inventory_size},
            {"encoder_hidden", encoder_hidden},
            {"audio_decoder_hidden", audio_decoder_hidden},
            {"text_decoder_hidden", text_decoder_hidden},
            {"layers", layers},
            {"phonetic_dim", phonetic_dim},
            {"speaker_dim", speaker_dim},
            {"embed_dim", embed_dim}};
  return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  NetConfig c;
  c.feature_dim = j.at("feature_dim");
  c.inventory_size = j.at("inventory_size");
  c.encoder_hidden = j.at("encoder_hidden");
  c.audio_decoder_hidden = j.at("audio_decoder_hidden");
  c.text_decoder_hidden = j.at("text_decoder_hidden");
  c.layers = j.at("layers");
  c.phonetic_dim = j.at("phonetic_dim");
  c.speaker_dim = j.at("speaker_dim");
  c.embed_dim = j.at("embed_dim");
  return c;
}

// ---------------------------------------------------------------------------
// Construction

Encoder::Encoder(int input_dim, int hidden, int layers, int out_dim)
    : projection(2 * hidden, out_dim) {
  for (int l = 0; l < layers; ++l) {
    const int in = l == 0 ? input_dim : 2 * hidden;
    forward_cells.emplace_back(in, hidden);
    backward_cells.emplace_back(in, hidden);
  }
}

Decoder::Decoder(int step_input_dim, int cond_dim, int hidden, int layers, int out_dim)
    : output(hidden, out_dim) {
  for (int l = 0; l < layers; ++l) {
    init.emplace_back(cond_dim, hidden);
    cells.emplace_back(l == 0 ? step_input_dim + cond_dim : hidden, hidden);
  }
}

Model Model::zeros(const NetConfig& c) {
  c.validate();
  Model m;
  m.config = c;
  m.embedding = Mat::Zero(c.embed_dim, c.inventory_size + 1);
  m.phonetic_encoder = Encoder(c.feature_dim, c.encoder_hidden, c.layers, c.phonetic_dim);
  m.speaker_encoder = Encoder(c.feature_dim, c.encoder_hidden, c.layers, c.speaker_dim);
  m.text_encoder = Encoder(c.embed_dim, c.encoder_hidden, c.layers, c.phonetic_dim);
  m.audio_decoder = Decoder(c.feature_dim, c.phonetic_dim + c.speaker_dim,
                            c.audio_decoder_hidden, c.layers, c.feature_dim);
  m.text_decoder = Decoder(c.embed_dim, c.phonetic_dim, c.text_decoder_hidden, c.layers,
                           c.inventory_size + 1);
  return m;
}

namespace {

bool is_bias(const std::string& name) {
  auto ends = [&](const char* s) {
    const std::size_t n = std::strlen(s);
    return name.size() >= n && name.compare(name.size() - n, n, s) == 0;
  };
  return ends(".bias") || ends(".bx") || ends(".bh");
}

}  // namespace

Model Model::create(const NetConfig& c, std::uint64_t seed) {
  Model m = zeros(c);
  Rng rng(seed);
  m.for_each([&](const std::string& name, auto& t) {
    if (is_bias(name)) return;
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uniform_real(rng, -0.08, 0.08);
  });
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

void Model::set_zero() {
  for_each([](const std::string&, auto& t) { t.setZero(); });
}

void Model::add_scaled(const Model& other, Real scale) {
  std::vector<const Real*> src;
  other.for_each([&](const std::string&, const auto& t) { src.push_back(t.data()); });
  std::size_t k = 0;
  for_each([&](const std::string&, auto& t) {
    const Real* s = src[k++];
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += scale * s[i];
  });
}

// ---------------------------------------------------------------------------
// Input batches

SequenceBatch audio_inputs(const std::vector<const Mat*>& frames) {
  SequenceBatch b;
  if (frames.empty()) return b;
  const Eigen::Index d = frames.front()->cols();
  int t_max = 0;
  for (const Mat* f : frames) {
    if (f->rows() < 1) throw Error("audio input with zero frames");
    if (f->cols() != d) throw Error("audio input frame-dim mismatch");
    b.lengths.push_back(static_cast<int>(f->rows()));
    t_max = std::max(t_max, static_cast<int>(f->rows()));
  }
  b.steps.assign(static_cast<std::size_t>(t_max), Mat::Zero(d, static_cast<Eigen::Index>(frames.size())));
  for (std::size_t c = 0; c < frames.size(); ++c) {
    for (Eigen::Index t = 0; t < frames[c]->rows(); ++t) {
      b.steps[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(c)) =
          frames[c]->row(t).transpose();
    }
  }
  return b;
}

SequenceBatch text_inputs(const Model& model, const std::vector<const std::vector<UnitId>*>& units) {
  SequenceBatch b;
  if (units.empty()) return b;
  const int s = model.config.inventory_size;
  int t_max = 0;
  for (const auto* u : units) {
    if (u->empty()) throw Error("text input with empty unit sequence");
    for (UnitId id : *u) {
      if (id < 0 || id >= s) throw Error("text input unit id out of range");
    }
    b.lengths.push_back(static_cast<int>(u->size()));
    t_max = std::max(t_max, static_cast<int>(u->size()));
  }
  b.steps.assign(static_cast<std::size_t>(t_max),
                 Mat::Zero(model.embedding.rows(), static_cast<Eigen::Index>(units.size())));
  for (std::size_t c = 0; c < units.size(); ++c) {
    for (std::size_t t = 0; t < units[c]->size(); ++t) {
      b.steps[t].col(static_cast<Eigen::Index>(c)) = model.embedding.col((*units[c])[t]);
    }
  }
  return b;
}

void accumulate_text_input_grad(const std::vector<Mat>& d_steps,
                                const std::vector<const std::vector<UnitId>*>& units,
                                Mat& d_embedding) {
  for (std::size_t c = 0; c < units.size(); ++c) {
    for (std::size_t t = 0; t < units[c]->size(); ++t) {
      d_embedding.col((*units[c])[t]) += d_steps[t].col(static_cast<Eigen::Index>(c));
    }
  }
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

std::vector<Mat> reverse_within(const std::vector<Mat>& steps, const std::vector<int>& lengths) {
  std::vector<Mat> out(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    out[t] = Mat::Zero(steps[t].rows(), steps[t].cols());
  }
  for (std::size_t c = 0; c < lengths.size(); ++c) {
    const int len = lengths[c];
    for (int t = 0; t < len; ++t) {
      out[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(c)) =
          steps[static_cast<std::size_t>(len - 1 - t)].col(static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

std::vector<RowVec> length_masks(const std::vector<int>& lengths, int steps) {
  std::vector<RowVec> masks(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    RowVec m(static_cast<Eigen::Index>(lengths.size()));
    for (std::size_t c = 0; c < lengths.size(); ++c) m(static_cast<Eigen::Index>(c)) = t < lengths[c] ? 1.0 : 0.0;
    masks[static_cast<std::size_t>(t)] = std::move(m);
  }
  return masks;
}

Mat vstack(const Mat& a, const Mat& b) {
  Mat out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

Mat encode(const Encoder& enc, const SequenceBatch& in, EncoderCache* cache) {
  const int batch = in.batch_size();
  const int steps = in.max_length();
  const std::size_t layers = enc.forward_cells.size();
  if (batch == 0) return Mat(enc.projection.out_dim(), 0);
  if (in.steps.front().rows() != enc.forward_cells.front().input_dim()) {
    throw Error("encoder input dimension mismatch: got " + std::to_string(in.steps.front().rows()) +
                ", expected " + std::to_string(enc.forward_cells.front().input_dim()));
  }
  const auto masks = length_masks(in.lengths, steps);
  if (cache) {
    cache->forward.assign(layers, std::vector<nn::GruStepCache<Real>>(static_cast<std::size_t>(steps)));
    cache->backward.assign(layers, std::vector<nn::GruStepCache<Real>>(static_cast<std::size_t>(steps)));
    cache->lengths = in.lengths;
  }
  std::vector<Mat> layer_in = in.steps;
  Mat final_f, final_b;
  for (std::size_t l = 0; l < layers; ++l) {
    const int hidden = enc.forward_cells[l].hidden();
    std::vector<Mat> out_f(static_cast<std::size_t>(steps));
    std::vector<Mat> out_b_rev(static_cast<std::size_t>(steps));
    Mat h = Mat::Zero(hidden, batch);
    for (int t = 0; t < steps; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      h = nn::step(enc.forward_cells[l], layer_in[ti], h, masks[ti], cache ? &cache->forward[l][ti] : nullptr);
      out_f[ti] = h;
    }
    final_f = h;
    const std::vector<Mat> rev_in = reverse_within(layer_in, in.lengths);
    h = Mat::Zero(hidden, batch);
    for (int t = 0; t < steps; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      h = nn::step(enc.backward_cells[l], rev_in[ti], h, masks[ti], cache ? &cache->backward[l][ti] : nullptr);
      out_b_rev[ti] = h;
    }
    final_b = h;
    if (l + 1 < layers) {
      const std::vector<Mat> out_b = reverse_within(out_b_rev, in.lengths);
      for (std::size_t t = 0; t < layer_in.size(); ++t) layer_in[t] = vstack(out_f[t], out_b[t]);
    }
  }
  Mat final_states = vstack(final_f, final_b);
  Mat out = nn::forward(enc.projection, final_states);
  if (cache) cache->final_states = std::move(final_states);
  return out;
}

std::vector<Mat> backward_encode(const Encoder& enc, const EncoderCache& cache, const Mat& d_out,
                                 Encoder& grad, bool want_input_grad) {
  const std::size_t layers = enc.forward_cells.size();
  const std::size_t steps = cache.forward.empty() ? 0 : cache.forward.front().size();
  if (steps == 0) return {};
  const Eigen::Index batch = d_out.cols();
  const Mat d_final = nn::backward(enc.projection, cache.final_states, d_out, grad.projection);
  const int top_hidden = enc.forward_cells.back().hidden();

  std::vector<Mat> d_out_f(steps), d_out_b_rev(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    d_out_f[t] = Mat::Zero(top_hidden, batch);
    d_out_b_rev[t] = Mat::Zero(top_hidden, batch);
  }
  d_out_f[steps - 1] += d_final.topRows(top_hidden);
  d_out_b_rev[steps - 1] += d_final.bottomRows(top_hidden);

  std::vector<Mat> d_layer_in;
  for (std::size_t li = layers; li-- > 0;) {
    const int hidden = enc.forward_cells[li].hidden();
    std::vector<Mat> d_in_f(steps), d_in_b_rev(steps);
    Mat dh = Mat::Zero(hidden, batch);
    Mat dh_prev;
    for (std::size_t t = steps; t-- > 0;) {
      dh += d_out_f[t];
      d_in_f[t] = nn::backward_step(enc.forward_cells[li], cache.forward[li][t], dh,
                                    grad.forward_cells[li], dh_prev);
      dh = dh_prev;
    }
    dh = Mat::Zero(hidden, batch);
    for (std::size_t t = steps; t-- > 0;) {
      dh += d_out_b_rev[t];
      d_in_b_rev[t] = nn::backward_step(enc.backward_cells[li], cache.backward[li][t], dh,
                                        grad.backward_cells[li], dh_prev);
      dh = dh_prev;
    }
    const std::vector<Mat> d_in_b = reverse_within(d_in_b_rev, cache.lengths);
    d_layer_in.assign(steps, Mat());
    for (std::size_t t = 0; t < steps; ++t) d_layer_in[t] = d_in_f[t] + d_in_b[t];
    if (li > 0) {
      const int below = enc.forward_cells[li - 1].hidden();
      std::vector<Mat> d_b(steps);
      for (std::size_t t = 0; t < steps; ++t) {
        d_out_f[t] = d_layer_in[t].topRows(below);
        d_b[t] = d_layer_in[t].bottomRows(below);
      }
      d_out_b_rev = reverse_within(d_b, cache.lengths);
    }
  }
  if (!want_input_grad) return {};
  return d_layer_in;
}

// ---------------------------------------------------------------------------
// Audio decoder

std::vector<Mat> run_audio_decoder(const Decoder& dec, const Mat& cond, int steps,
                                   AudioDecoderCache* cache) {
  if (steps < 1) throw Error("audio decoder: frame count must be >= 1");
  const std::size_t layers = dec.cells.size();
  const Eigen::Index batch = cond.cols();
  const int d = dec.output.out_dim();
  std::vector<Mat> h(layers);
  if (cache) {
    cache->cond = cond;
    cache->init_states.resize(layers);
    cache->steps.assign(static_cast<std::size_t>(steps), std::vector<nn::GruStepCache<Real>>(layers));
    cache->top.resize(static_cast<std::size_t>(steps));
  }
  for (std::size_t l = 0; l < layers; ++l) {
    h[l] = nn::forward(dec.init[l], cond).array().tanh().matrix();
    if (cache) cache->init_states[l] = h[l];
  }
  const RowVec no_mask;
  std::vector<Mat> frames(static_cast<std::size_t>(steps));
  Mat prev = Mat::Zero(d, batch);
  for (int t = 0; t < steps; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    Mat x = vstack(prev, cond);
    for (std::size_t l = 0; l < layers; ++l) {
      h[l] = nn::step(dec.cells[l], x, h[l], no_mask, cache ? &cache->steps[ti][l] : nullptr);
      x = h[l];
    }
    if (cache) cache->top[ti] = h.back();
    frames[ti] = nn::forward(dec.output, h.back());
    prev = frames[ti];
  }
  return frames;
}

Mat backward_audio_decoder(const Decoder& dec, const AudioDecoderCache& cache,
                           const std::vector<Mat>& d_frames, Decoder& grad) {
  const std::size_t layers = dec.cells.size();
  const std::size_t steps = cache.steps.size();
  const Eigen::Index batch = cache.cond.cols();
  const Eigen::Index d = dec.output.out_dim();
  const Eigen::Index c = cache.cond.rows();
  std::vector<Mat> dh(layers);
  for (std::size_t l = 0; l < layers; ++l) dh[l] = Mat::Zero(dec.cells[l].hidden(), batch);
  Mat d_cond = Mat::Zero(c, batch);
  Mat d_prev = Mat::Zero(d, batch);
  Mat dh_prev;
  for (std::size_t t = steps; t-- > 0;) {
    const Mat d_y = d_frames[t] + d_prev;
    dh[layers - 1] += nn::backward(dec.output, cache.top[t], d_y, grad.output);
    for (std::size_t l = layers; l-- > 0;) {
      const Mat dx = nn::backward_step(dec.cells[l], cache.steps[t][l], dh[l], grad.cells[l], dh_prev);
      dh[l] = dh_prev;
      if (l > 0) {
        dh[l - 1] += dx;
      } else {
        d_prev = dx.topRows(d);
        d_cond += dx.bottomRows(c);
      }
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const Mat d_pre = (dh[l].array() * (1.0 - cache.init_states[l].array().square())).matrix();
    d_cond += nn::backward(dec.init[l], cache.cond, d_pre, grad.init[l]);
  }
  return d_cond;
}

// ---------------------------------------------------------------------------
// Text decoder

namespace {

// Runs the text decoder; `next_inputs(t, logits)` chooses the embedding
// column fed to each column at step t given the previous step's logits.
// `stop(t)` ends decoding early after step t.
template <typename NextInputs, typename Stop>
std::vector<Mat> run_text_steps(const Model& model, const Mat& cond, int max_steps,
                                NextInputs&& next_inputs, Stop&& stop, TextDecoderCache* cache) {
  const Decoder& dec = model.text_decoder;
  const std::size_t layers = dec.cells.size();
  const Eigen::Index batch = cond.cols();
  const Eigen::Index eos = model.config.inventory_size;
  if (cond.rows() != model.config.phonetic_dim) throw Error("text decoder: conditioning dimension mismatch");
  std::vector<Mat> h(layers);
  if (cache) {
    cache->cond = cond;
    cache->init_states.resize(layers);
    cache->steps.clear();
    cache->top.clear();
    cache->inputs.clear();
  }
  for (std::size_t l = 0; l < layers; ++l) {
    h[l] = nn::forward(dec.init[l], cond).array().tanh().matrix();
    if (cache) cache->init_states[l] = h[l];
  }
  const RowVec no_mask;
  std::vector<Mat> logits;
  for (int t = 0; t < max_steps; ++t) {
    const std::vector<UnitId> inputs = next_inputs(t, logits);
    Mat x(model.embedding.rows() + cond.rows(), batch);
    for (Eigen::Index col = 0; col < batch; ++col) {
      x.col(col) << model.embedding.col(inputs[static_cast<std::size_t>(col)]), cond.col(col);
    }
    std::vector<nn::GruStepCache<Real>> step_caches(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      h[l] = nn::step(dec.cells[l], x, h[l], no_mask, cache ? &step_caches[l] : nullptr);
      x = h[l];
    }
    Mat lg = nn::forward(dec.output, h.back());
    if (t == 0) lg.row(eos).setConstant(-std::numeric_limits<Real>::infinity());
    logits.push_back(std::move(lg));
    if (cache) {
      cache->steps.push_back(std::move(step_caches));
      cache->top.push_back(h.back());
      cache->inputs.push_back(inputs);
    }
    if (stop(t, logits)) break;
  }
  return logits;
}

}  // namespace

std::vector<Mat> run_text_decoder_teacher(const Model& model, const Mat& cond,
                                          const std::vector<const std::vector<UnitId>*>& targets,
                                          TextDecoderCache* cache) {
  const UnitId bos = model.config.inventory_size;
  std::size_t max_len = 0;
  for (const auto* y : targets) {
    if (y->empty()) throw Error("text decoder: empty teacher sequence");
    max_len = std::max(max_len, y->size());
  }
  auto next = [&](int t, const std::vector<Mat>&) {
    std::vector<UnitId> in(targets.size(), bos);
    if (t == 0) return in;
    for (std::size_t c = 0; c < targets.size(); ++c) {
      if (static_cast<std::size_t>(t - 1) < targets[c]->size()) in[c] = (*targets[c])[static_cast<std::size_t>(t - 1)];
    }
    return in;
  };
  auto never = [](int, const std::vector<Mat>&) { return false; };
  return run_text_steps(model, cond, static_cast<int>(max_len) + 1, next, never, cache);
}

GreedyDecode run_text_decoder_greedy(const Model& model, const Mat& cond, int max_len,
                                     TextDecoderCache* cache) {
  if (max_len < 1) throw Error("text decoder: max_len must be >= 1");
  const UnitId bos = model.config.inventory_size;
  const UnitId eos = model.config.inventory_size;
  const auto batch = static_cast<std::size_t>(cond.cols());
  GreedyDecode out;
  out.units.assign(batch, {});
  std::vector<bool> done(batch, false);
  std::vector<UnitId> last(batch, bos);

  auto record = [&](const Mat& lg) {
    for (std::size_t c = 0; c < batch; ++c) {
      if (done[c]) {
        last[c] = bos;
        continue;
      }
      Eigen::Index best = 0;
      lg.col(static_cast<Eigen::Index>(c)).maxCoeff(&best);
      if (static_cast<UnitId>(best) == eos) {
        done[c] = true;
        last[c] = bos;
      } else {
        out.units[c].push_back(static_cast<UnitId>(best));
        last[c] = static_cast<UnitId>(best);
      }
    }
  };
  auto next = [&](int t, const std::vector<Mat>& logits) {
    if (t > 0) record(logits.back());
    return last;
  };
  auto stop = [&](int t, const std::vector<Mat>& logits) {
    if (t + 1 == max_len) {
      record(logits.back());
      return true;
    }
    // Peek: finished once every column has produced EOS.
    for (std::size_t c = 0; c < batch; ++c) {
      if (done[c]) continue;
      Eigen::Index best = 0;
      logits.back().col(static_cast<Eigen::Index>(c)).maxCoeff(&best);
      if (static_cast<UnitId>(best) != eos) return false;
    }
    record(logits.back());
    return true;
  };
  out.logits = run_text_steps(model, cond, max_len, next, stop, cache);
  return out;
}

Mat backward_text_decoder(const Model& model, const TextDecoderCache& cache,
                          const std::vector<Mat>& d_logits, Model& grad) {
  const Decoder& dec = model.text_decoder;
  const std::size_t layers = dec.cells.size();
  const std::size_t steps = cache.steps.size();
  const Eigen::Index batch = cache.cond.cols();
  const Eigen::Index e = model.embedding.rows();
  const Eigen::Index c = cache.cond.rows();
  std::vector<Mat> dh(layers);
  for (std::size_t l = 0; l < layers; ++l) dh[l] = Mat::Zero(dec.cells[l].hidden(), batch);
  Mat d_cond = Mat::Zero(c, batch);
  Mat dh_prev;
  for (std::size_t t = steps; t-- > 0;) {
    dh[layers - 1] += nn::backward(dec.output, cache.top[t], d_logits[t], grad.text_decoder.output);
    for (std::size_t l = layers; l-- > 0;) {
      const Mat dx = nn::backward_step(dec.cells[l], cache.steps[t][l], dh[l], grad.text_decoder.cells[l], dh_prev);
      dh[l] = dh_prev;
      if (l > 0) {
        dh[l - 1] += dx;
      } else {
        for (Eigen::Index col = 0; col < batch; ++col) {
          grad.embedding.col(cache.inputs[t][static_cast<std::size_t>(col)]) += dx.col(col).head(e);
        }
        d_cond += dx.bottomRows(c);
      }
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const Mat d_pre = (dh[l].array() * (1.0 - cache.init_states[l].array().square())).matrix();
    d_cond += nn::backward(dec.init[l], cache.cond, d_pre, grad.text_decoder.init[l]);
  }
  return d_cond;
}

// ---------------------------------------------------------------------------
// Item-level operations

namespace {

void check_frames(const Model& model, const Mat& frames) {
  if (frames.rows() < 1) throw Error("spoken word has no frames");
  if (frames.cols() != model.config.feature_dim) {
    throw Error("frame-dim mismatch: got " + std::to_string(frames.cols()) + ", model expects " +
                std::to_string(model.config.feature_dim));
  }
}

}  // namespace

Mat encode_audio_phonetic(const Model& model, const std::vector<const Mat*>& frames) {
  for (const Mat* f : frames) check_frames(model, *f);
  return encode(model.phonetic_encoder, audio_inputs(frames), nullptr);
}

Mat encode_speaker(const Model& model, const std::vector<const Mat*>& frames) {
  for (const Mat* f : frames) check_frames(model, *f);
  return encode(model.speaker_encoder, audio_inputs(frames), nullptr);
}

Mat encode_text(const Model& model, const std::vector<const std::vector<UnitId>*>& units) {
  return encode(model.text_encoder, text_inputs(model, units), nullptr);
}

Vec encode_audio_phonetic(const Model& model, const SpokenWord& x) {
  return encode_audio_phonetic(model, std::vector<const Mat*>{&x.frames}).col(0);
}

Vec encode_speaker(const Model& model, const SpokenWord& x) {
  return encode_speaker(model, std::vector<const Mat*>{&x.frames}).col(0);
}

Vec encode_text(const Model& model, const TextWord& y) {
  return encode_text(model, std::vector<const std::vector<UnitId>*>{&y.units}).col(0);
}

Mat decode_audio(const Model& model, const Vec& phonetic, const Vec& speaker, int frames) {
  if (frames < 1) throw Error("decode_audio: T must be >= 1");
  if (phonetic.size() != model.config.phonetic_dim || speaker.size() != model.config.speaker_dim) {
    throw Error("decode_audio: conditioning dimension mismatch");
  }
  Mat cond(phonetic.size() + speaker.size(), 1);
  cond << phonetic, speaker;
  const auto steps = run_audio_decoder(model.audio_decoder, cond, frames, nullptr);
  Mat out(frames, model.config.feature_dim);
  for (int t = 0; t < frames; ++t) out.row(t) = steps[static_cast<std::size_t>(t)].col(0).transpose();
  return out;
}

std::vector<Vec> decode_text(const Model& model, const Vec& phonetic, const TextWord* teacher,
                             int max_len) {
  if (max_len < 1) throw Error("decode_text: max_len must be >= 1");
  const Mat cond = phonetic;
  std::vector<Mat> logits;
  if (teacher) {
    logits = run_text_decoder_teacher(model, cond, {&teacher->units}, nullptr);
  } else {
    logits = run_text_decoder_greedy(model, cond, max_len, nullptr).logits;
  }
  std::vector<Vec> out;
  for (const Mat& lg : logits) out.push_back(nn::softmax_columns<Real>(lg).col(0));
  return out;
}

// ---------------------------------------------------------------------------
// Tensor container

namespace {

constexpr char kTensorMagic[8] = {'P', 'H', 'A', 'T', 'E', 'N', 'S', '1'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    buf.append(bytes, sizeof(T));
  } else {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw Error("corrupt tensor file " + path_ + ": unexpected end of data");
  }
  const std::string& buf_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const Mat& TensorFile::at(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw Error("tensor file: missing tensor '" + name + "'");
}

void write_tensor_file(const fs::path& path, const TensorFile& file) {
  std::string buf(kTensorMagic, 8);
  put<std::uint32_t>(buf, kTensorFileVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(file.header.size()));
  buf += file.header;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, m] : file.tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(buf, m(r, c));
    }
  }
  put<std::uint64_t>(buf, fnv1a(buf));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

TensorFile read_tensor_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 8 || std::memcmp(buf.data(), kTensorMagic, 8) != 0) {
    throw Error("corrupt tensor file " + path.string() + ": bad magic or truncated");
  }
  const std::size_t body = buf.size() - 8;
  {
    Reader tail(buf, buf.size(), path.string());
    (void)tail.bytes(body);
    const auto stored = tail.get<std::uint64_t>();
    if (stored != fnv1a(buf.substr(0, body))) {
      throw Error("corrupt tensor file " + path.string() + ": checksum mismatch");
    }
  }
  Reader r(buf, body, path.string());
  (void)r.bytes(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw Error("tensor file " + path.string() + ": unsupported version " + std::to_string(version));
  }
  TensorFile file;
  file.header = r.bytes(r.get<std::uint32_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Mat m(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a) {
      for (std::uint32_t b = 0; b < cols; ++b) m(a, b) = r.get<double>();
    }
    file.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.pos() != body) throw Error("corrupt tensor file " + path.string() + ": trailing bytes");
  return file;
}

void save_checkpoint(const Model& model, const fs::path& path) {
  TensorFile file;
  json header = {{"kind", "checkpoint"},
                 {"version", kCheckpointVersion},
                 {"config", json::parse(model.config.to_json())}};
  file.header = header.dump();
  model.for_each([&](const std::string& name, const auto& t) { file.tensors.emplace_back(name, Mat(t)); });
  write_tensor_file(path, file);
}

Model load_checkpoint(const fs::path& path) {
  const TensorFile file = read_tensor_file(path);
  json header;
  try {
    header = json::parse(file.header);
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  if (header.value("kind", "") != "checkpoint") throw Error(path.string() + " is not a model checkpoint");
  if (header.value("version", 0U) != kCheckpointVersion) {
    throw Error("checkpoint " + path.string() + ": version mismatch");
  }
  const NetConfig config = NetConfig::from_json(header.at("config").dump());
  Model model = Model::zeros(config);
  std::map<std::string, const Mat*> by_name;
  for (const auto& [n, m] : file.tensors) by_name[n] = &m;
  model.for_each([&](const std::string& name, auto& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("corrupt checkpoint " + path.string() + ": missing " + name);
    const Mat& m = *it->second;
    if (m.rows() != t.rows() || m.cols() != t.cols()) {
      throw Error("corrupt checkpoint " + path.string() + ": shape mismatch for " + name);
    }
    t = m;
  });
  return model;
}

Model load_checkpoint(const fs::path& path, const NetConfig& expected) {
  Model model = load_checkpoint(path);
  if (!(model.config == expected)) {
    throw Error("checkpoint " + path.string() + ": config mismatch (stored " + model.config.to_json() +
                ", expected " + expected.to_json() + ")");
  }
  return model;
}

}  // namespace phonoalign
