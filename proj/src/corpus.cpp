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

#include "phonoalign/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace phonoalign {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Lexicon

Lexicon::Lexicon(std::vector<std::string> inventory,
                 std::vector<std::pair<std::string, std::vector<UnitId>>> words)
    : inventory_(std::move(inventory)) {
  const int s = inventory_size();
  for (auto& [surface, units] : words) {
    if (index_.count(surface)) throw Error("lexicon: duplicate word '" + surface + "'");
    if (units.empty()) throw Error("lexicon: word '" + surface + "' has no units");
    for (UnitId u : units) {
      if (u < 0 || u >= s) {
        throw Error("lexicon: word '" + surface + "' uses unit id " +
                    std::to_string(u) + " outside inventory of size " +
                    std::to_string(s));
      }
    }
    const auto k = static_cast<WordId>(surface_.size());
    index_.emplace(surface, k);
    surface_.push_back(surface);
    words_.push_back(TextWord{std::move(units), k});
  }
}

std::optional<WordId> Lexicon::find(const std::string& surface) const {
  auto it = index_.find(surface);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<UnitId> Lexicon::find_unit(const std::string& symbol) const {
  auto it = std::find(inventory_.begin(), inventory_.end(), symbol);
  if (it == inventory_.end()) return std::nullopt;
  return static_cast<UnitId>(it - inventory_.begin());
}

int Lexicon::max_word_length() const {
  std::size_t m = 0;
  for (const auto& w : words_) m = std::max(m, w.units.size());
  return static_cast<int>(m);
}

bool Lexicon::operator==(const Lexicon& other) const {
  if (inventory_ != other.inventory_ || surface_ != other.surface_) return false;
  for (std::size_t k = 0; k < words_.size(); ++k) {
    if (words_[k].units != other.words_[k].units) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Corpus

int Corpus::feature_dim() const {
  return spoken.empty() ? 0 : spoken.front().feature_dim();
}

std::size_t Corpus::total_frames() const {
  std::size_t n = 0;
  for (const auto& w : spoken) n += static_cast<std::size_t>(w.num_frames());
  return n;
}

double Corpus::duration_hours(double frame_period) const {
  return static_cast<double>(total_frames()) * frame_period / 3600.0;
}

std::vector<std::size_t> Corpus::annotated() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spoken.size(); ++i) {
    if (spoken[i].word_id) out.push_back(i);
  }
  return out;
}

std::optional<std::vector<WordId>> Corpus::transcript(std::size_t utt) const {
  std::vector<WordId> ids;
  for (std::size_t i : utterances.at(utt).words) {
    if (!spoken[i].word_id) return std::nullopt;
    ids.push_back(*spoken[i].word_id);
  }
  return ids;
}

std::vector<std::vector<WordId>> Corpus::transcripts() const {
  std::vector<std::vector<WordId>> out;
  for (std::size_t u = 0; u < utterances.size(); ++u) {
    if (auto t = transcript(u)) out.push_back(std::move(*t));
  }
  return out;
}

std::vector<std::string> Corpus::reference(std::size_t utt) const {
  std::vector<std::string> out;
  for (std::size_t i : utterances.at(utt).words) {
    out.push_back(spoken[i].label.value_or("<unk>"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

void check_finite(const Mat& m, const fs::path& path) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw Error("non-finite feature value in " + path.string() + " at frame " +
                    std::to_string(r) + ", dim " + std::to_string(c));
      }
    }
  }
}

}  // namespace

Mat read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open feature file " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  Mat frames;
  if (in.gcount() == 8 && std::memcmp(magic, kFeatureMagic, 8) == 0) {
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw Error("truncated feature header in " + path.string());
    rows = to_le(rows);
    cols = to_le(cols);
    std::vector<float> data(static_cast<std::size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw Error("truncated feature data in " + path.string());
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        bits = to_le(bits);
        std::memcpy(&f, &bits, 4);
      }
    }
    frames.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        frames(r, c) = static_cast<Real>(data[static_cast<std::size_t>(r) * cols + c]);
      }
    }
  } else {
    in.clear();
    in.seekg(0);
    std::vector<std::vector<float>> rows;
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::vector<float> row;
      std::string tok;
      while (ls >> tok) {
        char* end = nullptr;
        const float v = std::strtof(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
          throw Error("bad feature value '" + tok + "' in " + path.string());
        }
        row.push_back(v);
      }
      if (row.empty()) continue;
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw Error("ragged feature rows in " + path.string());
      }
      rows.push_back(std::move(row));
    }
    frames.resize(static_cast<Eigen::Index>(rows.size()),
                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        frames(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
  }
  if (frames.rows() < 1 || frames.cols() < 1) {
    throw Error("empty feature matrix in " + path.string());
  }
  check_finite(frames, path);
  return frames;
}

void write_features_binary(const fs::path& path, const Mat& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature file " + path.string());
  out.write(kFeatureMagic, 8);
  const std::uint32_t rows = to_le(static_cast<std::uint32_t>(frames.rows()));
  const std::uint32_t cols = to_le(static_cast<std::uint32_t>(frames.cols()));
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
      float f = static_cast<float>(frames(r, c));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      bits = to_le(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

void write_features_text(const fs::path& path, const Mat& frames) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write feature file " + path.string());
  char buf[32];
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(frames(r, c))));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Lexicon files

Lexicon load_lexicon(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path.string());
  std::vector<std::string> declared;
  bool has_declared = false;
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("#inventory", 0) == 0) {
      std::istringstream ls(line.substr(10));
      std::string sym;
      while (ls >> sym) declared.push_back(sym);
      has_declared = true;
      continue;
    }
    if (line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("lexicon " + path.string() + " line " + std::to_string(lineno) +
                  ": expected 'word<TAB>units'");
    }
    std::istringstream ls(line.substr(tab + 1));
    std::vector<std::string> units;
    std::string u;
    while (ls >> u) units.push_back(u);
    entries.emplace_back(line.substr(0, tab), std::move(units));
  }
  std::vector<std::string> inventory = declared;
  if (!has_declared) {
    std::set<std::string> seen;
    for (const auto& [w, units] : entries) {
      for (const auto& u : units) {
        if (seen.insert(u).second) inventory.push_back(u);
      }
    }
  }
  for (const auto& sym : inventory) {
    if (sym == Lexicon::kBos || sym == Lexicon::kEos || sym == Lexicon::kPad) {
      throw Error("lexicon " + path.string() + ": reserved symbol '" + sym +
                  "' used as a subword unit");
    }
  }
  std::unordered_map<std::string, UnitId> unit_index;
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    unit_index.emplace(inventory[i], static_cast<UnitId>(i));
  }
  std::vector<std::pair<std::string, std::vector<UnitId>>> words;
  for (const auto& [w, units] : entries) {
    std::vector<UnitId> ids;
    for (const auto& u : units) {
      auto it = unit_index.find(u);
      if (it == unit_index.end()) {
        throw Error("lexicon " + path.string() + ": unknown subword symbol '" + u +
                    "' in word '" + w + "'");
      }
      ids.push_back(it->second);
    }
    words.emplace_back(w, std::move(ids));
  }
  return Lexicon(std::move(inventory), std::move(words));
}

void save_lexicon(const Lexicon& lexicon, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write lexicon " + path.string());
  out << "#inventory";
  for (const auto& s : lexicon.inventory()) out << ' ' << s;
  out << '\n';
  for (std::size_t k = 0; k < lexicon.size(); ++k) {
    out << lexicon.surface(static_cast<WordId>(k)) << '\t';
    const auto& units = lexicon.word(static_cast<WordId>(k)).units;
    for (std::size_t i = 0; i < units.size(); ++i) {
      out << (i ? " " : "") << lexicon.inventory()[static_cast<std::size_t>(units[i])];
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Manifests

Corpus load_corpus(const fs::path& manifest_path, const fs::path& lexicon_path,
                   const LoadOptions& options) {
  return load_corpus(manifest_path, load_lexicon(lexicon_path), options);
}

Corpus load_corpus(const fs::path& manifest_path, const Lexicon& lexicon,
                   const LoadOptions& options) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  Corpus corpus;
  corpus.lexicon = lexicon;
  std::map<std::string, std::size_t> utt_index;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const std::string ctx = "manifest " + manifest_path.string() + " row " + std::to_string(row);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ctx + ": " + e.what());
    }
    SpokenWord w;
    try {
      w.utterance_id = rec.at("utterance_id").get<std::string>();
      w.position = rec.at("position").get<int>();
      const fs::path feat = rec.at("features").get<std::string>();
      const fs::path full = feat.is_absolute() ? feat : base / feat;
      if (!fs::exists(full)) throw Error("missing feature file " + full.string());
      w.frames = read_features(full);
      if (rec.contains("word") && !rec["word"].is_null()) {
        w.label = rec["word"].get<std::string>();
      }
      if (rec.contains("speaker") && rec["speaker"].is_number_integer()) {
        w.speaker = rec["speaker"].get<int>();
      }
    } catch (const Error& e) {
      throw Error(ctx + ": " + e.what());
    } catch (const json::exception& e) {
      throw Error(ctx + ": " + e.what());
    }
    if (!corpus.spoken.empty() && w.feature_dim() != corpus.feature_dim()) {
      throw Error(ctx + ": feature dimension mismatch (" + std::to_string(w.feature_dim()) +
                  " vs " + std::to_string(corpus.feature_dim()) + ")");
    }
    if (w.label) {
      w.word_id = lexicon.find(*w.label);
      if (!w.word_id && !options.allow_oov) {
        throw Error(ctx + ": word '" + *w.label + "' not in lexicon");
      }
    }
    auto [it, inserted] = utt_index.emplace(w.utterance_id, corpus.utterances.size());
    if (inserted) corpus.utterances.push_back(Utterance{w.utterance_id, {}});
    corpus.utterances[it->second].words.push_back(corpus.spoken.size());
    corpus.spoken.push_back(std::move(w));
  }
  if (corpus.spoken.empty()) throw Error("empty corpus");
  for (auto& utt : corpus.utterances) {
    std::stable_sort(utt.words.begin(), utt.words.end(), [&](std::size_t a, std::size_t b) {
      return corpus.spoken[a].position < corpus.spoken[b].position;
    });
    for (std::size_t i = 1; i < utt.words.size(); ++i) {
      if (corpus.spoken[utt.words[i]].position == corpus.spoken[utt.words[i - 1]].position) {
        throw Error("manifest " + manifest_path.string() + ": duplicate position " +
                    std::to_string(corpus.spoken[utt.words[i]].position) +
                    " in utterance " + utt.id);
      }
    }
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const fs::path& manifest_path,
                 const fs::path& feature_dir) {
  fs::create_directories(feature_dir);
  if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path);
  if (!out) throw Error("cannot write manifest " + manifest_path.string());
  const fs::path base = fs::absolute(manifest_path).parent_path();
  for (std::size_t i = 0; i < corpus.spoken.size(); ++i) {
    const SpokenWord& w = corpus.spoken[i];
    const fs::path feat = feature_dir / (w.utterance_id + "_" + std::to_string(w.position) + ".feat");
    write_features_binary(feat, w.frames);
    json rec;
    rec["utterance_id"] = w.utterance_id;
    rec["position"] = w.position;
    rec["features"] = fs::relative(fs::absolute(feat), base).generic_string();
    if (w.label) rec["word"] = *w.label;
    if (w.speaker) rec["speaker"] = *w.speaker;
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// CMVN

Corpus apply_cmvn(const Corpus& corpus) {
  Corpus out = corpus;
  const int d = corpus.feature_dim();
  for (const auto& utt : corpus.utterances) {
    Vec mean = Vec::Zero(d);
    Vec sq = Vec::Zero(d);
    std::size_t n = 0;
    for (std::size_t i : utt.words) {
      const Mat& f = corpus.spoken[i].frames;
      mean += f.colwise().sum().transpose();
      n += static_cast<std::size_t>(f.rows());
    }
    mean /= static_cast<Real>(n);
    for (std::size_t i : utt.words) {
      const Mat centered = corpus.spoken[i].frames.rowwise() - mean.transpose();
      sq += centered.array().square().colwise().sum().matrix().transpose();
    }
    Vec scale = Vec::Ones(d);
    if (n < 2) {
      warn("utterance " + utt.id + " has a single frame; mean-centering only");
    } else {
      const Vec var = sq / static_cast<Real>(n);
      for (int k = 0; k < d; ++k) {
        if (var(k) > 1e-20) scale(k) = 1.0 / std::sqrt(var(k));
      }
    }
    for (std::size_t i : utt.words) {
      Mat& f = out.spoken[i].frames;
      f = ((f.rowwise() - mean.transpose()).array().rowwise() * scale.transpose().array()).matrix();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pair sets and subsampling

PairSet build_pair_set(const Corpus& corpus, std::size_t n_paired, std::uint64_t seed) {
  std::vector<std::size_t> candidates = corpus.annotated();
  if (n_paired > candidates.size()) {
    throw Error("requested N_paired=" + std::to_string(n_paired) + " but only " +
                std::to_string(candidates.size()) + " annotated spoken words are available");
  }
  Rng rng(seed);
  shuffle(candidates, rng);
  PairSet z;
  z.pairs.reserve(n_paired);
  for (std::size_t i = 0; i < n_paired; ++i) {
    z.pairs.push_back(PairItem{candidates[i], *corpus.spoken[candidates[i]].word_id});
  }
  return z;
}

Corpus select_utterances(const Corpus& corpus, const std::vector<std::size_t>& utterances) {
  std::vector<std::size_t> keep = utterances;
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  std::vector<bool> retained(corpus.utterances.size(), false);
  for (std::size_t u : keep) retained.at(u) = true;

  Corpus out;
  out.lexicon = corpus.lexicon;
  std::vector<std::size_t> remap(corpus.spoken.size(), static_cast<std::size_t>(-1));
  std::vector<bool> word_kept(corpus.spoken.size(), false);
  for (std::size_t u : keep) {
    for (std::size_t i : corpus.utterances[u].words) word_kept[i] = true;
  }
  for (std::size_t i = 0; i < corpus.spoken.size(); ++i) {
    if (!word_kept[i]) continue;
    remap[i] = out.spoken.size();
    out.spoken.push_back(corpus.spoken[i]);
  }
  for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
    if (!retained[u]) continue;
    Utterance nu{corpus.utterances[u].id, {}};
    for (std::size_t i : corpus.utterances[u].words) nu.words.push_back(remap[i]);
    out.utterances.push_back(std::move(nu));
  }
  return out;
}

Corpus subsample_speech(const Corpus& corpus, double hours, double frame_period,
                        std::uint64_t seed) {
  if (!(hours > 0.0)) throw Error("subsample_speech: hours must be positive");
  if (!(frame_period > 0.0)) throw Error("subsample_speech: frame period must be positive");
  const double budget = hours * 3600.0 / frame_period;
  const auto total = static_cast<double>(corpus.total_frames());
  if (budget > total * (1.0 + 1e-9)) {
    throw Error("subsample_speech: requested " + std::to_string(hours) +
                " hr exceeds corpus duration " +
                std::to_string(corpus.duration_hours(frame_period)) + " hr");
  }
  std::vector<std::size_t> order(corpus.utterances.size());
  for (std::size_t u = 0; u < order.size(); ++u) order[u] = u;
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<std::size_t> keep;
  double kept = 0.0;
  for (std::size_t u : order) {
    if (kept >= budget * (1.0 - 1e-12)) break;
    keep.push_back(u);
    for (std::size_t i : corpus.utterances[u].words) kept += corpus.spoken[i].num_frames();
  }
  return select_utterances(corpus, keep);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

std::vector<std::vector<UnitId>> draw_pronunciations(const SynthSpec& spec, Rng& rng) {
  if (!spec.word_units.empty()) {
    std::set<std::vector<UnitId>> seen;
    for (const auto& w : spec.word_units) {
      if (!seen.insert(w).second) {
        throw Error("synthetic spec: duplicate unit sequence; words must be phonetically distinct");
      }
    }
    return spec.word_units;
  }
  if (spec.min_units < 1 || spec.max_units < spec.min_units) {
    throw Error("synthetic spec: invalid word length range");
  }
  double capacity = 0.0;
  for (int len = spec.min_units; len <= spec.max_units; ++len) {
    capacity += std::pow(static_cast<double>(spec.inventory_size), len);
  }
  if (capacity < spec.vocab_size) {
    throw Error("synthetic spec: inventory too small for a phonetically distinct vocabulary");
  }
  std::set<std::vector<UnitId>> seen;
  std::vector<std::vector<UnitId>> words;
  while (static_cast<int>(words.size()) < spec.vocab_size) {
    const int len = spec.min_units +
                    static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.max_units - spec.min_units + 1)));
    std::vector<UnitId> w(static_cast<std::size_t>(len));
    for (auto& u : w) u = static_cast<UnitId>(uniform_index(rng, static_cast<std::size_t>(spec.inventory_size)));
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

struct TokenPlan {
  WordId word;
  int speaker;
};

void emit_split(const SynthSpec& spec, const std::vector<std::vector<UnitId>>& pron,
                const Mat& prototypes, const Mat& offsets, int first_speaker, int n_speakers,
                int tokens_per_word, const std::string& prefix, Rng& rng, Corpus& corpus) {
  std::vector<std::vector<TokenPlan>> per_speaker(static_cast<std::size_t>(n_speakers));
  for (int w = 0; w < spec.vocab_size; ++w) {
    for (int r = 0; r < tokens_per_word; ++r) {
      const int s = r % n_speakers;
      per_speaker[static_cast<std::size_t>(s)].push_back(TokenPlan{w, first_speaker + s});
    }
  }
  const int d = spec.feature_dim;
  for (int s = 0; s < n_speakers; ++s) {
    auto& tokens = per_speaker[static_cast<std::size_t>(s)];
    shuffle(tokens, rng);
    int utt_no = 0;
    for (std::size_t start = 0; start < tokens.size();
         start += static_cast<std::size_t>(spec.words_per_utterance)) {
      Utterance utt;
      utt.id = prefix + "_s" + std::to_string(first_speaker + s) + "_u" + std::to_string(utt_no++);
      const std::size_t end = std::min(tokens.size(), start + static_cast<std::size_t>(spec.words_per_utterance));
      for (std::size_t t = start; t < end; ++t) {
        const TokenPlan& plan = tokens[t];
        const auto& units = pron[static_cast<std::size_t>(plan.word)];
        std::vector<int> durations;
        int total = 0;
        for (std::size_t k = 0; k < units.size(); ++k) {
          const int dur = spec.min_frames_per_unit +
                          static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.max_frames_per_unit - spec.min_frames_per_unit + 1)));
          durations.push_back(dur);
          total += dur;
        }
        SpokenWord w;
        w.frames.resize(total, d);
        int row = 0;
        for (std::size_t k = 0; k < units.size(); ++k) {
          for (int f = 0; f < durations[k]; ++f, ++row) {
            for (int j = 0; j < d; ++j) {
              w.frames(row, j) = prototypes(units[k], j) + offsets(plan.speaker, j) +
                                 spec.noise * standard_normal(rng);
            }
          }
        }
        w.utterance_id = utt.id;
        w.position = static_cast<int>(t - start);
        w.label = corpus.lexicon.surface(plan.word);
        w.word_id = plan.word;
        w.speaker = plan.speaker;
        utt.words.push_back(corpus.spoken.size());
        corpus.spoken.push_back(std::move(w));
      }
      corpus.utterances.push_back(std::move(utt));
    }
  }
}

}  // namespace

SyntheticCorpus generate_synthetic_split(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.vocab_size < 1 || spec.inventory_size < 1 || spec.speakers < 1 ||
      spec.tokens_per_word < 0 || spec.feature_dim < 1 || spec.words_per_utterance < 1 ||
      spec.min_frames_per_unit < 1 || spec.max_frames_per_unit < spec.min_frames_per_unit ||
      spec.test_speakers < 0 || spec.test_tokens_per_word < 0) {
    throw Error("synthetic spec: invalid sizes");
  }
  Rng rng(seed);
  SyntheticCorpus out;
  auto pron = draw_pronunciations(spec, rng);
  if (!spec.word_units.empty() && static_cast<int>(pron.size()) != spec.vocab_size) {
    throw Error("synthetic spec: word_units size does not match vocab_size");
  }
  std::vector<std::string> inventory;
  for (int u = 0; u < spec.inventory_size; ++u) inventory.push_back("p" + std::to_string(u));
  std::vector<std::pair<std::string, std::vector<UnitId>>> words;
  for (int k = 0; k < spec.vocab_size; ++k) {
    char name[16];
    std::snprintf(name, sizeof name, "w%03d", k);
    words.emplace_back(name, pron[static_cast<std::size_t>(k)]);
  }
  Lexicon lexicon(std::move(inventory), std::move(words));

  out.prototypes.resize(spec.inventory_size, spec.feature_dim);
  for (Eigen::Index i = 0; i < out.prototypes.size(); ++i) {
    out.prototypes.data()[i] = spec.prototype_scale * standard_normal(rng);
  }
  out.speaker_offsets.resize(spec.speakers + spec.test_speakers, spec.feature_dim);
  for (Eigen::Index i = 0; i < out.speaker_offsets.size(); ++i) {
    out.speaker_offsets.data()[i] = spec.speaker_scale * standard_normal(rng);
  }
  out.train.lexicon = lexicon;
  out.test.lexicon = lexicon;
  emit_split(spec, pron, out.prototypes, out.speaker_offsets, 0, spec.speakers,
             spec.tokens_per_word, "train", rng, out.train);
  if (spec.test_speakers > 0 && spec.test_tokens_per_word > 0) {
    emit_split(spec, pron, out.prototypes, out.speaker_offsets, spec.speakers,
               spec.test_speakers, spec.test_tokens_per_word, "test", rng, out.test);
  }
  return out;
}

Corpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
  return generate_synthetic_split(spec, seed).train;
}

SynthSpec load_synth_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open synthetic spec " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("synthetic spec " + path.string() + ": " + e.what());
  }
  SynthSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", s.vocab_size);
  get("inventory_size", s.inventory_size);
  get("min_units", s.min_units);
  get("max_units", s.max_units);
  get("word_units", s.word_units);
  get("speakers", s.speakers);
  get("test_speakers", s.test_speakers);
  get("tokens_per_word", s.tokens_per_word);
  get("test_tokens_per_word", s.test_tokens_per_word);
  get("min_frames_per_unit", s.min_frames_per_unit);
  get("max_frames_per_unit", s.max_frames_per_unit);
  get("feature_dim", s.feature_dim);
  get("noise", s.noise);
  get("prototype_scale", s.prototype_scale);
  get("speaker_scale", s.speaker_scale);
  get("words_per_utterance", s.words_per_utterance);
  return s;
}

void save_synth_spec(const SynthSpec& s, const fs::path& path) {
  json j = {{"vocab_size", s.vocab_size},
            {"inventory_size", s.inventory_size},
            {"min_units", s.min_units},
            {"max_units", s.max_units},
            {"word_units", s.word_units},
            {"speakers", s.speakers},
            {"test_speakers", s.test_speakers},
            {"tokens_per_word", s.tokens_per_word},
            {"test_tokens_per_word", s.test_tokens_per_word},
            {"min_frames_per_unit", s.min_frames_per_unit},
            {"max_frames_per_unit", s.max_frames_per_unit},
            {"feature_dim", s.feature_dim},
            {"noise", s.noise},
            {"prototype_scale", s.prototype_scale},
            {"speaker_scale", s.speaker_scale},
            {"words_per_utterance", s.words_per_utterance}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write synthetic spec " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace phonoalign
