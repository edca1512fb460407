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

// Command-line front end: synth, train, align, decode, score, spectrum,
// ablate, cycle-study and compare.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "phonoalign/harness.hpp"

namespace fs = std::filesystem;
using namespace phonoalign;

namespace {

// Hyperparameter flags are copied onto the experiment config only when
// given, so flags override the config file and the file overrides defaults.
class ConfigFlags {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& name, T& (*field)(ExperimentConfig&), const std::string& help) {
    auto value = std::make_shared<T>(field(defaults_));
    CLI::Option* opt = app->add_option(name, *value, help)->capture_default_str();
    overrides_.push_back({opt, [value, field](ExperimentConfig& c) { field(c) = *value; }});
  }
  void add_custom(CLI::Option* opt, std::function<void(ExperimentConfig&)> apply) {
    overrides_.push_back({opt, std::move(apply)});
  }
  ExperimentConfig resolve(const std::string& config_path) const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    for (const auto& o : overrides_) {
      if (o.option->count() > 0) o.apply(c);
    }
    c.validate();
    return c;
  }

 private:
  struct Override {
    CLI::Option* option;
    std::function<void(ExperimentConfig&)> apply;
  };
  ExperimentConfig defaults_;
  std::vector<Override> overrides_;
};

#define FIELD(type, expr) +[](ExperimentConfig& c) -> type& { return c.expr; }

void add_hyperparameters(CLI::App* app, ConfigFlags& f) {
  f.add<int>(app, "--encoder-hidden", FIELD(int, net.encoder_hidden), "encoder GRU width");
  f.add<int>(app, "--audio-decoder-hidden", FIELD(int, net.audio_decoder_hidden), "audio decoder GRU width");
  f.add<int>(app, "--text-decoder-hidden", FIELD(int, net.text_decoder_hidden), "text decoder GRU width");
  f.add<int>(app, "--layers", FIELD(int, net.layers), "GRU layers (1 to 3)");
  f.add<int>(app, "--phonetic-dim", FIELD(int, net.phonetic_dim), "phonetic vector size");
  f.add<int>(app, "--speaker-dim", FIELD(int, net.speaker_dim), "speaker vector size");
  f.add<int>(app, "--embed-dim", FIELD(int, net.embed_dim), "subword embedding size");
  f.add<Real>(app, "--learning-rate", FIELD(Real, train.learning_rate), "Adam step size");
  f.add<int>(app, "--batch-size", FIELD(int, train.batch_size), "items of each kind per batch");
  f.add<int>(app, "--max-epochs", FIELD(int, train.max_epochs), "epoch cap");
  f.add<int>(app, "--steps-per-epoch", FIELD(int, train.steps_per_epoch), "steps per epoch, 0 for one pass");
  f.add<int>(app, "--max-steps", FIELD(int, train.max_steps), "step cap, 0 for none");
  f.add<int>(app, "--patience", FIELD(int, train.patience), "early-stopping patience in epochs");
  f.add<int>(app, "--negatives", FIELD(int, train.negatives_per_pair), "negatives per pair");
  f.add<Real>(app, "--clip-norm", FIELD(Real, train.clip_norm), "global gradient norm cap, 0 disables");
  f.add<Real>(app, "--margin", FIELD(Real, train.weights.margin), "hinge margin on squared distance");
  f.add<Real>(app, "--cycle-weight", FIELD(Real, train.weights.cycle_weight), "cycle term weight");
  f.add<Real>(app, "--lm-weight", FIELD(Real, decode.lm_weight), "LM weight in decoding");
  f.add<int>(app, "--beam-size", FIELD(int, decode.beam_size), "beam width");
  f.add<Real>(app, "--lm-backoff", FIELD(Real, lm.backoff), "trigram backoff mass");
  f.add<int>(app, "--projection-dim", FIELD(int, projection_dim), "PCA dimension of the separate path, 0 for phonetic-dim");
  f.add<Real>(app, "--align-cycle-weight", FIELD(Real, align.cycle_weight), "cycle weight of the linear maps");
  f.add<Real>(app, "--align-learning-rate", FIELD(Real, align.learning_rate), "step size of the linear maps");
  f.add<int>(app, "--align-steps", FIELD(int, align.steps), "iterations for the linear maps");
  f.add<int>(app, "--critic-hidden", FIELD(int, critic.hidden), "critic width");
  f.add<int>(app, "--n-critic", FIELD(int, critic.n_critic), "critic updates per encoder step");
  f.add<Real>(app, "--gp-weight", FIELD(Real, critic.gp_weight), "gradient penalty weight");
  f.add<Real>(app, "--critic-learning-rate", FIELD(Real, critic.learning_rate), "critic Adam step size");
  f.add<double>(app, "--frame-period", FIELD(double, frame_period), "seconds per feature frame");

  auto alpha = std::make_shared<std::vector<Real>>();
  f.add_custom(app->add_option("--alpha", *alpha, "weights of the five joint loss terms")->expected(5)->default_str("0.2 1 0.2 1 5"),
               [alpha](ExperimentConfig& c) {
                 for (std::size_t i = 0; i < 5; ++i) c.train.weights.alpha[i] = (*alpha)[i];
               });
  auto strategy = std::make_shared<std::string>("joint");
  f.add_custom(app->add_option("--strategy", *strategy, "joint or separate")->capture_default_str(),
               [strategy](ExperimentConfig& c) { c.strategy = strategy_from_name(*strategy); });
  f.add_custom(app->add_flag("--cycle", "add the cycle-consistency term"),
               [](ExperimentConfig& c) { c.train.weights.cycle_enabled = true; });
  f.add_custom(app->add_flag("--no-critic", "disable the speaker-adversarial critic"),
               [](ExperimentConfig& c) { c.critic.enabled = false; });
  f.add_custom(app->add_flag("--no-cmvn", "skip per-utterance CMVN"), [](ExperimentConfig& c) { c.cmvn = false; });
}

#undef FIELD

struct DataFlags {
  std::string synth_spec;
  std::string train_manifest;
  std::string test_manifest;
  std::string lexicon;
};

void add_data_flags(CLI::App* app, DataFlags& d) {
  app->add_option("--synth-spec", d.synth_spec, "synthetic corpus spec (JSON); default spec when no manifests are given");
  app->add_option("--train-manifest", d.train_manifest, "training manifest (JSONL)");
  app->add_option("--test-manifest", d.test_manifest, "test manifest (JSONL)");
  app->add_option("--lexicon", d.lexicon, "lexicon file");
}

ExperimentData load_data(const DataFlags& d, std::uint64_t seed, bool need_test) {
  if (!d.train_manifest.empty()) {
    if (d.lexicon.empty()) throw Error("--train-manifest requires --lexicon");
    const Lexicon lex = load_lexicon(d.lexicon);
    ExperimentData data;
    data.train = load_corpus(d.train_manifest, lex);
    if (!d.test_manifest.empty()) {
      LoadOptions opt;
      opt.allow_oov = true;
      data.test = load_corpus(d.test_manifest, lex, opt);
    } else if (need_test) {
      throw Error("--test-manifest is required with --train-manifest");
    }
    return data;
  }
  const SynthSpec spec = d.synth_spec.empty() ? SynthSpec{} : load_synth_spec(d.synth_spec);
  SyntheticCorpus s = generate_synthetic_split(spec, seed);
  return {std::move(s.train), std::move(s.test)};
}

std::size_t resolve_pairs(const Corpus& c, long long n_paired, double fraction) {
  const std::size_t available = c.annotated().size();
  if (n_paired >= 0) return static_cast<std::size_t>(n_paired);
  if (fraction >= 0) return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(available)));
  return available;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text << '\n';
}

RowCallback progress() {
  return [](const ResultRow& r) {
    std::cerr << std::left << std::setw(28) << r.id << " seed " << r.seed << "  " << status_name(r.status);
    if (r.wer) std::cerr << "  WER " << std::fixed << std::setprecision(2) << *r.wer;
    if (!r.message.empty()) std::cerr << "  (" << r.message << ")";
    std::cerr << "  " << std::setprecision(1) << r.wall_seconds << " s\n" << std::defaultfloat;
  };
}

int finish(const ResultTable& t, const fs::path& out_dir, const std::string& csv) {
  write_result_csv(t, out_dir / csv);
  write_manifest(t, out_dir / "manifest.json");
  std::cerr << "wrote " << (out_dir / csv).string() << " and manifest.json\n";
  if (t.any_failed()) {
    std::cerr << "one or more cells failed\n";
    return 1;
  }
  return 0;
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> w;
  std::istringstream in(line);
  for (std::string s; in >> s;) w.push_back(s);
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phonoalign: audio-text phonetic embedding alignment for low-resource word recognition"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir = "out";
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  DataFlags data_flags;
  add_data_flags(&app, data_flags);
  ConfigFlags flags;
  add_hyperparameters(&app, flags);

  long long n_paired = -1;
  double pair_fraction = -1;
  auto add_pairs = [&](CLI::App* sub) {
    sub->add_option("--n-paired", n_paired, "paired words N (default: all annotated)");
    sub->add_option("--pair-fraction", pair_fraction, "paired fraction of annotated words");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus (train, test, lexicon)");

  CLI::App* train = app.add_subcommand("train", "train the networks (joint, or the separate autoencoders)");
  add_pairs(train);

  std::string checkpoint, alignment_path, lm_path, decodes_path;
  CLI::App* align = app.add_subcommand("align", "fit PCA and linear maps for a separately trained model");
  add_pairs(align);
  align->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  CLI::App* decode = app.add_subcommand("decode", "decode the test set and report WER");
  decode->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  decode->add_option("--alignment", alignment_path, "alignment file (separate strategy)");
  decode->add_option("--lm", lm_path, "trigram LM (default: trained on the training transcripts)");

  std::string ref_path, hyp_path;
  CLI::App* score = app.add_subcommand("score", "word error rate of decodes or of reference/hypothesis files");
  score->add_option("--decodes", decodes_path, "decode records (JSONL)");
  score->add_option("--ref", ref_path, "reference transcripts, one utterance per line");
  score->add_option("--hyp", hyp_path, "hypothesis transcripts, one utterance per line");

  std::vector<double> hours, hour_fractions;
  std::vector<std::size_t> n_values;
  int repeats = 1, contour_resolution = 25;
  std::string seed_policy = "per-cell";
  CLI::App* spectrum = app.add_subcommand("spectrum", "data-size x N grid with a contour");
  spectrum->add_option("--hours", hours, "speech hours per row of the grid");
  spectrum->add_option("--hours-fraction", hour_fractions, "speech per row as a fraction of the training corpus");
  spectrum->add_option("--n", n_values, "paired-word counts")->required();
  spectrum->add_option("--repeats", repeats, "seed repeats")->capture_default_str();
  spectrum->add_option("--seed-policy", seed_policy, "per-cell or shared")->capture_default_str();
  spectrum->add_option("--contour-resolution", contour_resolution, "contour grid nodes per axis")->capture_default_str();

  std::vector<std::string> drop = {"intra_audio", "intra_text", "cross_audio", "cross_text", "cross_embedding"};
  CLI::App* ablate = app.add_subcommand("ablate", "drop single loss terms");
  add_pairs(ablate);
  ablate->add_option("--drop", drop, "terms to drop")->capture_default_str();
  ablate->add_option("--repeats", repeats, "seed repeats")->capture_default_str();

  CLI::App* cycle = app.add_subcommand("cycle-study", "cycle term off and on for each N");
  cycle->add_option("--n", n_values, "paired-word counts")->required();
  cycle->add_option("--repeats", repeats, "seed repeats")->capture_default_str();

  CLI::App* compare = app.add_subcommand("compare", "joint versus separate learning then transformation");
  add_pairs(compare);
  compare->add_option("--repeats", repeats, "seed repeats")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out(out_dir);
    fs::create_directories(out);
    const ExperimentConfig cfg = flags.resolve(config_path);
    write_text(out / "experiment.json", nlohmann::json::parse(cfg.to_json()).dump(2));
    const std::uint64_t data_seed = derive_seed(seed, 1);
    const std::uint64_t train_seed = derive_seed(seed, 2);

    if (synth->parsed()) {
      const SynthSpec spec = data_flags.synth_spec.empty() ? SynthSpec{} : load_synth_spec(data_flags.synth_spec);
      const SyntheticCorpus s = generate_synthetic_split(spec, seed);
      save_lexicon(s.train.lexicon, out / "lexicon.txt");
      save_corpus(s.train, out / "train" / "manifest.jsonl", out / "train" / "feats");
      save_corpus(s.test, out / "test" / "manifest.jsonl", out / "test" / "feats");
      save_synth_spec(spec, out / "synth_spec.json");
      std::cerr << "synthetic corpus: " << s.train.spoken.size() << " training words, " << s.test.spoken.size()
                << " test words, " << std::setprecision(4) << s.train.duration_hours(cfg.frame_period) << " hr\n";
      return 0;
    }

    if (score->parsed()) {
      std::vector<std::vector<std::string>> refs, hyps;
      if (!decodes_path.empty()) {
        for (const auto& d : read_decode_records(decodes_path)) {
          refs.push_back(d.reference);
          hyps.push_back(d.hypothesis);
        }
      } else if (!ref_path.empty() && !hyp_path.empty()) {
        std::ifstream r(ref_path), h(hyp_path);
        if (!r || !h) throw Error("cannot open reference or hypothesis file");
        for (std::string line; std::getline(r, line);) refs.push_back(split_words(line));
        for (std::string line; std::getline(h, line);) hyps.push_back(split_words(line));
      } else {
        throw Error("score needs --decodes or both --ref and --hyp");
      }
      EditCounts e;
      for (std::size_t u = 0; u < std::min(refs.size(), hyps.size()); ++u) e += align_words(refs[u], hyps[u]);
      std::cout << std::fixed << std::setprecision(2) << "WER " << word_error_rate(refs, hyps) << " % (S " << e.substitutions
                << ", I " << e.insertions << ", D " << e.deletions << ", N " << e.reference_words << ")\n";
      return 0;
    }

    const bool need_test = decode->parsed() || spectrum->parsed() || ablate->parsed() || cycle->parsed() ||
                           compare->parsed();
    ExperimentData data = load_data(data_flags, seed, need_test);

    if (train->parsed() || align->parsed()) {
      const std::size_t n = resolve_pairs(data.train, n_paired, pair_fraction);
      if (n > data.train.annotated().size()) throw Error("N exceeds the annotated words available");
      const PairSet pairs = build_pair_set(data.train, n, derive_seed(data_seed, 1));
      const Corpus corpus = cfg.cmvn ? apply_cmvn(data.train) : data.train;
      if (train->parsed()) {
        NetConfig net = cfg.net;
        net.feature_dim = corpus.feature_dim();
        net.inventory_size = corpus.lexicon.inventory_size();
        TrainConfig tc = cfg.train;
        tc.seed = train_seed;
        tc.log_path = out / "train_log.jsonl";
        tc.checkpoint_path = out / "model.ckpt";
        const TrainResult r = cfg.strategy == Strategy::kJoint ? train_joint(corpus, pairs, net, tc)
                                                               : train_separate(corpus, net, tc, cfg.critic);
        save_checkpoint(r.model, out / "model.ckpt");
        train_trigram_lm(data.train.transcripts(), data.train.lexicon.size(), cfg.lm).save(out / "lm.json");
        std::cerr << strategy_name(cfg.strategy) << " training: " << r.steps << " steps, best validation "
                  << r.best_validation << " at step " << r.best_step << (r.diverged ? " (diverged)" : "")
                  << (r.early_stopped ? " (early stop)" : "") << "\n";
        return r.diverged ? 1 : 0;
      }
      const Model model = load_checkpoint(checkpoint);
      const int d = cfg.projection_dim > 0 ? cfg.projection_dim : model.config.phonetic_dim;
      const SeparateAlignment al = fit_separate_alignment(model, corpus, pairs, d, cfg.align);
      save_alignment(al, out / "alignment.bin");
      std::cerr << "alignment objective " << al.objective.front() << " -> " << al.objective.back() << " over "
                << al.objective.size() - 1 << " steps\n";
      return 0;
    }

    if (decode->parsed()) {
      const Model model = load_checkpoint(checkpoint);
      const TrigramLM lm = lm_path.empty()
                               ? train_trigram_lm(data.train.transcripts(), data.train.lexicon.size(), cfg.lm)
                               : TrigramLM::load(lm_path);
      const Corpus test = cfg.cmvn ? apply_cmvn(data.test) : data.test;
      std::vector<UtteranceDecode> decodes;
      if (alignment_path.empty()) {
        decodes = decode_corpus(test, data.train.lexicon, JointSpace(model), lm, cfg.decode);
      } else {
        const SeparateAlignment al = load_alignment(alignment_path);
        decodes = decode_corpus(test, data.train.lexicon, SeparateSpace(model, al), lm, cfg.decode);
      }
      write_decode_records(decodes, out / "decodes.jsonl");
      std::cout << std::fixed << std::setprecision(2) << "WER " << word_error_rate(decodes) << " %\n";
      return 0;
    }

    if (spectrum->parsed()) {
      ExperimentGrid g;
      g.hours = hours;
      for (double f : hour_fractions) g.hours.push_back(f * data.train.duration_hours(cfg.frame_period));
      g.n_paired = n_values;
      g.seed = seed;
      g.repeats = repeats;
      if (seed_policy == "shared") g.seed_policy = SeedPolicy::kShared;
      else if (seed_policy != "per-cell") throw Error("unknown seed policy '" + seed_policy + "'");
      const ResultTable t = run_spectrum(data, g, cfg, progress());
      const auto points = spectrum_points(t);
      try {
        write_contour_csv(emit_contour(points, contour_resolution), out / "contour.csv");
      } catch (const Error& e) {
        std::cerr << "no contour: " << e.what() << "\n";
      }
      return finish(t, out, "spectrum.csv");
    }
    if (ablate->parsed()) {
      std::vector<Term> terms;
      for (const auto& name : drop) terms.push_back(term_from_name(name));
      const ResultTable t = run_ablation(data, resolve_pairs(data.train, n_paired, pair_fraction), terms, cfg, seed,
                                         repeats, progress());
      return finish(t, out, "ablation.csv");
    }
    if (cycle->parsed()) {
      return finish(run_cycle_study(data, n_values, cfg, seed, repeats, progress()), out, "cycle.csv");
    }
    if (compare->parsed()) {
      const ResultTable t = run_strategy_comparison(data, resolve_pairs(data.train, n_paired, pair_fraction), cfg, seed,
                                                    repeats, progress());
      return finish(t, out, "strategy.csv");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
