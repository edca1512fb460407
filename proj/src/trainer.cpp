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

#include "phonoalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace phonoalign {

using json = nlohmann::json;

namespace {

// Raw views of every tensor, in for_each order.
struct Span {
  Real* data;
  Eigen::Index size;
};

std::vector<Span> spans(Model& m) {
  std::vector<Span> out;
  m.for_each([&](const std::string&, auto& t) { out.push_back({t.data(), t.size()}); });
  return out;
}

std::vector<const Real*> cspans(const Model& m, std::vector<Eigen::Index>* sizes = nullptr) {
  std::vector<const Real*> out;
  m.for_each([&](const std::string&, const auto& t) {
    out.push_back(t.data());
    if (sizes) sizes->push_back(t.size());
  });
  return out;
}

json breakdown_json(const LossBreakdown& b) {
  json terms = json::object();
  for (int k = 0; k < kNumTerms; ++k) terms[term_name(static_cast<Term>(k))] = b.terms[static_cast<std::size_t>(k)];
  return {{"total", b.total}, {"terms", terms}};
}

bool finite(const LossBreakdown& b) {
  if (!std::isfinite(b.total)) return false;
  return std::all_of(b.terms.begin(), b.terms.end(), [](Real v) { return std::isfinite(v); });
}

Batch validation_batch(const Corpus& corpus, const PairSet& val, int cap, int negatives,
                       std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  std::vector<std::size_t> audio(corpus.spoken.size());
  std::iota(audio.begin(), audio.end(), 0);
  shuffle(audio, rng);
  audio.resize(std::min(audio.size(), static_cast<std::size_t>(cap)));
  b.audio = audio;
  std::vector<WordId> text(corpus.lexicon.size());
  std::iota(text.begin(), text.end(), 0);
  shuffle(text, rng);
  text.resize(std::min(text.size(), static_cast<std::size_t>(cap)));
  b.text = text;
  const std::size_t n = std::min(val.pairs.size(), static_cast<std::size_t>(cap));
  for (std::size_t i = 0; i < n; ++i) {
    b.paired.push_back(val.pairs[i]);
    b.negatives.push_back(sample_negatives(corpus, val.pairs[i].word, negatives, rng));
  }
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw Error("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw Error("Adam epsilon must be positive");
  if (max_epochs < 1) throw Error("max epochs must be at least 1");
  if (steps_per_epoch < 0 || max_steps < 0) throw Error("step counts must be non-negative");
  if (patience < 1) throw Error("patience must be at least 1");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) throw Error("validation fraction must lie in [0, 1)");
  if (negatives_per_pair < 1) throw Error("at least one negative per pair is required");
  if (clip_norm < 0) throw Error("clip norm must be non-negative");
  weights.validate();
}

std::string TrainConfig::to_json() const {
  json w = {{"alpha", weights.alpha},
            {"enabled", weights.enabled},
            {"margin", weights.margin},
            {"cycle_weight", weights.cycle_weight},
            {"cycle_enabled", weights.cycle_enabled},
            {"cycle_gradient", weights.cycle_gradient == CycleGradient::kExact ? "exact" : "straight_through"}};
  json j = {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"max_epochs", max_epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"max_steps", max_steps},
            {"patience", patience},
            {"validation_fraction", validation_fraction},
            {"max_validation_items", max_validation_items},
            {"negatives_per_pair", negatives_per_pair},
            {"clip_norm", clip_norm},
            {"seed", seed},
            {"weights", w}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  const json j = json::parse(text);
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.learning_rate = value;
    else if (key == "batch_size") c.batch_size = value;
    else if (key == "beta1") c.beta1 = value;
    else if (key == "beta2") c.beta2 = value;
    else if (key == "epsilon") c.epsilon = value;
    else if (key == "max_epochs") c.max_epochs = value;
    else if (key == "steps_per_epoch") c.steps_per_epoch = value;
    else if (key == "max_steps") c.max_steps = value;
    else if (key == "patience") c.patience = value;
    else if (key == "validation_fraction") c.validation_fraction = value;
    else if (key == "max_validation_items") c.max_validation_items = value;
    else if (key == "negatives_per_pair") c.negatives_per_pair = value;
    else if (key == "clip_norm") c.clip_norm = value;
    else if (key == "seed") c.seed = value;
    else if (key == "weights") {
      for (const auto& [wk, wv] : value.items()) {
        if (wk == "alpha") c.weights.alpha = wv;
        else if (wk == "enabled") c.weights.enabled = wv;
        else if (wk == "margin") c.weights.margin = wv;
        else if (wk == "cycle_weight") c.weights.cycle_weight = wv;
        else if (wk == "cycle_enabled") c.weights.cycle_enabled = wv;
        else if (wk == "cycle_gradient") {
          const std::string g = wv;
          if (g == "exact") c.weights.cycle_gradient = CycleGradient::kExact;
          else if (g == "straight_through") c.weights.cycle_gradient = CycleGradient::kStraightThrough;
          else throw Error("unknown cycle gradient '" + g + "'");
        } else {
          throw Error("unknown loss weight key '" + wk + "'");
        }
      }
    } else {
      throw Error("unknown training config key '" + key + "'");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<std::size_t> sample_negatives(const Corpus& corpus, WordId anchor, int k, Rng& rng) {
  const std::size_t m = corpus.spoken.size();
  auto eligible = [&](std::size_t i) { return corpus.spoken[i].word_id != anchor; };
  std::vector<std::size_t> out;
  std::vector<std::size_t> pool;  // built lazily if rejection keeps failing
  for (int n = 0; n < k; ++n) {
    bool found = false;
    for (int attempt = 0; attempt < 64 && m > 0; ++attempt) {
      const std::size_t i = uniform_index(rng, m);
      if (eligible(i)) {
        out.push_back(i);
        found = true;
        break;
      }
    }
    if (found) continue;
    if (pool.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        if (eligible(i)) pool.push_back(i);
      }
      if (pool.empty()) {
        throw Error("no negative sample available for word " + std::to_string(anchor) +
                    ": every spoken word carries that label");
      }
    }
    out.push_back(pool[uniform_index(rng, pool.size())]);
  }
  return out;
}

BatchRngs::BatchRngs(std::uint64_t seed)
    : audio(derive_seed(seed, 1)), text(derive_seed(seed, 2)), paired(derive_seed(seed, 3)) {}

Batch sample_batch(const Corpus& corpus, const PairSet& pairs, int size, int negatives_per_pair,
                   BatchRngs& rngs) {
  if (corpus.spoken.empty()) throw Error("sample_batch: empty corpus");
  if (size < 1) throw Error("sample_batch: batch size must be at least 1");
  Batch b;
  for (int i = 0; i < size; ++i) b.audio.push_back(uniform_index(rngs.audio, corpus.spoken.size()));
  if (!corpus.lexicon.empty()) {
    for (int i = 0; i < size; ++i) {
      b.text.push_back(static_cast<WordId>(uniform_index(rngs.text, corpus.lexicon.size())));
    }
  }
  if (!pairs.empty()) {
    for (int i = 0; i < size; ++i) {
      const PairItem& p = pairs.pairs[uniform_index(rngs.paired, pairs.pairs.size())];
      b.paired.push_back(p);
      b.negatives.push_back(sample_negatives(corpus, p.word, negatives_per_pair, rngs.paired));
    }
  }
  return b;
}

std::pair<PairSet, PairSet> split_validation(const PairSet& pairs, Real fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(pairs.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(order, rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<Real>(order.size())));
  if (n_val == 0 && fraction > 0 && order.size() >= 2) n_val = 1;
  std::vector<char> is_val(order.size(), 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = 1;
  PairSet train, val;
  for (std::size_t i = 0; i < pairs.pairs.size(); ++i) (is_val[i] ? val : train).pairs.push_back(pairs.pairs[i]);
  return {train, val};
}

// ---------------------------------------------------------------------------
// Optimization

Adam::Adam(const Model& like, Real lr, Real beta1, Real beta2, Real epsilon)
    : m_(Model::zeros(like.config)),
      v_(Model::zeros(like.config)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {}

void Adam::step(Model& params, const Model& grad) {
  ++t_;
  const Real c1 = 1.0 - std::pow(beta1_, t_);
  const Real c2 = 1.0 - std::pow(beta2_, t_);
  auto p = spans(params);
  auto m = spans(m_);
  auto v = spans(v_);
  const auto g = cspans(grad);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (Eigen::Index i = 0; i < p[k].size; ++i) {
      const Real gi = g[k][i];
      Real& mi = m[k].data[i];
      Real& vi = v[k].data[i];
      mi = beta1_ * mi + (1.0 - beta1_) * gi;
      vi = beta2_ * vi + (1.0 - beta2_) * gi * gi;
      p[k].data[i] -= lr_ * (mi / c1) / (std::sqrt(vi / c2) + epsilon_);
    }
  }
}

Real global_norm(const Model& grad) {
  std::vector<Eigen::Index> sizes;
  const auto g = cspans(grad, &sizes);
  Real s = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (Eigen::Index i = 0; i < sizes[k]; ++i) s += g[k][i] * g[k][i];
  }
  return std::sqrt(s);
}

Real clip_global_norm(Model& grad, Real max_norm) {
  const Real norm = global_norm(grad);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& sp : spans(grad)) {
      for (Eigen::Index i = 0; i < sp.size; ++i) sp.data[i] *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train_joint(const Corpus& corpus, const PairSet& pairs, const NetConfig& net,
                        const TrainConfig& config, const StepHook& hook) {
  config.validate();
  net.validate();
  if (corpus.spoken.empty()) throw Error("train_joint: empty corpus");
  if (corpus.feature_dim() != net.feature_dim) {
    throw Error("train_joint: corpus feature dim " + std::to_string(corpus.feature_dim()) +
                " does not match network feature dim " + std::to_string(net.feature_dim));
  }
  if (corpus.lexicon.inventory_size() != net.inventory_size) {
    throw Error("train_joint: lexicon inventory size does not match network config");
  }

  auto [train_pairs, val_pairs] = split_validation(pairs, config.validation_fraction, derive_seed(config.seed, 5));
  const Batch val_batch = validation_batch(corpus, val_pairs, config.max_validation_items,
                                           config.negatives_per_pair, derive_seed(config.seed, 6));
  const int steps_per_epoch =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : static_cast<int>((corpus.spoken.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                             static_cast<std::size_t>(config.batch_size));

  std::ofstream log;
  if (!config.log_path.empty()) {
    if (config.log_path.has_parent_path()) std::filesystem::create_directories(config.log_path.parent_path());
    log.open(config.log_path);
    if (!log) throw Error("cannot write run log " + config.log_path.string());
    log << json{{"event", "start"},
                {"n_spoken", corpus.spoken.size()},
                {"n_train_pairs", train_pairs.n_paired()},
                {"n_validation_pairs", val_pairs.n_paired()},
                {"steps_per_epoch", steps_per_epoch},
                {"net", json::parse(net.to_json())},
                {"train", json::parse(config.to_json())}}
               .dump()
        << "\n";
  }

  TrainResult result;
  Model model = Model::create(net, derive_seed(config.seed, 4));
  Model grad = Model::zeros(net);
  Adam adam(model, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  BatchRngs rngs(derive_seed(config.seed, 7));
  result.model = model;
  bool have_best = false;
  int bad_epochs = 0;
  int step = 0;

  auto validate_now = [&](int epoch) {
    ValidationRecord rec{step, epoch, total_loss(model, corpus, val_batch, config.weights)};
    result.validation.push_back(rec);
    if (log) {
      json j = breakdown_json(rec.loss);
      j["event"] = "validation";
      j["step"] = step;
      j["epoch"] = epoch;
      log << j.dump() << "\n";
    }
    if (!finite(rec.loss)) return false;
    if (!have_best || rec.loss.total < result.best_validation) {
      have_best = true;
      result.best_validation = rec.loss.total;
      result.best_step = step;
      result.model = model;
      bad_epochs = 0;
      if (!config.checkpoint_path.empty()) save_checkpoint(model, config.checkpoint_path);
    } else {
      ++bad_epochs;
    }
    return true;
  };

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    bool stop = false;
    for (int s = 0; s < steps_per_epoch; ++s) {
      if (config.max_steps > 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
      const Batch batch = sample_batch(corpus, train_pairs, config.batch_size, config.negatives_per_pair, rngs);
      grad.set_zero();
      StepRecord rec;
      rec.step = step + 1;
      rec.loss = total_loss(model, corpus, batch, config.weights, &grad);
      if (hook) rec.extra = hook(model, batch, grad, step);
      rec.grad_norm = clip_global_norm(grad, config.clip_norm);
      if (!finite(rec.loss) || !std::isfinite(rec.extra) || !std::isfinite(rec.grad_norm)) {
        result.diverged = true;
        if (log) log << json{{"event", "diverged"}, {"step", rec.step}}.dump() << "\n";
        warn("training diverged at step " + std::to_string(rec.step) + "; keeping the last finite checkpoint");
        if (!have_best) result.model = model;
        stop = true;
        break;
      }
      adam.step(model, grad);
      ++step;
      result.history.push_back(rec);
      if (log) {
        json j = breakdown_json(rec.loss);
        j["event"] = "step";
        j["step"] = rec.step;
        j["grad_norm"] = rec.grad_norm;
        if (hook) j["extra"] = rec.extra;
        log << j.dump() << "\n";
      }
    }
    if (result.diverged) break;
    const bool partial = stop;
    if (step > 0 && (!partial || result.validation.empty() || result.validation.back().step != step)) {
      if (!validate_now(epoch)) {
        result.diverged = true;
        if (!have_best) result.model = model;
        break;
      }
    }
    if (stop) break;
    if (bad_epochs >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!have_best && !result.diverged) result.model = model;
  result.steps = step;
  if (log) {
    log << json{{"event", "end"},
                {"steps", step},
                {"best_step", result.best_step},
                {"best_validation", result.best_validation},
                {"diverged", result.diverged},
                {"early_stopped", result.early_stopped}}
               .dump()
        << "\n";
  }
  return result;
}

}  // namespace phonoalign
