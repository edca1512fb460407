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

#include "phonoalign/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

namespace phonoalign {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scoring

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  insertions += o.insertions;
  deletions += o.deletions;
  reference_words += o.reference_words;
  return *this;
}

EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // cost[i][j]: edits turning ref[0, i) into hyp[0, j).
  std::vector<std::vector<std::size_t>> cost(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({sub, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }
  EditCounts e;
  e.reference_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++e.substitutions;
      --i, --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ++e.deletions;
      --i;
    } else {
      ++e.insertions;
      --j;
    }
  }
  return e;
}

Real word_error_rate(const std::vector<std::vector<std::string>>& refs,
                     const std::vector<std::vector<std::string>>& hyps) {
  if (refs.size() != hyps.size()) {
    throw Error("word error rate: " + std::to_string(refs.size()) + " references but " +
                std::to_string(hyps.size()) + " hypotheses");
  }
  EditCounts total;
  for (std::size_t u = 0; u < refs.size(); ++u) total += align_words(refs[u], hyps[u]);
  if (total.reference_words == 0) throw Error("word error rate: empty reference set");
  return 100.0 * static_cast<Real>(total.errors()) / static_cast<Real>(total.reference_words);
}

Real word_error_rate(const std::vector<UtteranceDecode>& decodes) {
  std::vector<std::vector<std::string>> refs, hyps;
  for (const auto& d : decodes) {
    refs.push_back(d.reference);
    hyps.push_back(d.hypothesis);
  }
  return word_error_rate(refs, hyps);
}

// ---------------------------------------------------------------------------
// Configuration

const char* strategy_name(Strategy s) { return s == Strategy::kJoint ? "joint" : "separate"; }

Strategy strategy_from_name(const std::string& name) {
  if (name == "joint") return Strategy::kJoint;
  if (name == "separate") return Strategy::kSeparate;
  throw Error("unknown strategy '" + name + "' (expected joint or separate)");
}

namespace {

json critic_json(const CriticConfig& c) {
  return {{"enabled", c.enabled},       {"hidden", c.hidden},
          {"n_critic", c.n_critic},     {"gp_weight", c.gp_weight},
          {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},           {"adversarial_weight", c.adversarial_weight},
          {"pairs", c.pairs},           {"leak", c.leak}};
}

CriticConfig critic_from_json(const json& j) {
  CriticConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "enabled") c.enabled = v;
    else if (k == "hidden") c.hidden = v;
    else if (k == "n_critic") c.n_critic = v;
    else if (k == "gp_weight") c.gp_weight = v;
    else if (k == "learning_rate") c.learning_rate = v;
    else if (k == "beta1") c.beta1 = v;
    else if (k == "beta2") c.beta2 = v;
    else if (k == "adversarial_weight") c.adversarial_weight = v;
    else if (k == "pairs") c.pairs = v;
    else if (k == "leak") c.leak = v;
    else throw Error("unknown critic config key '" + k + "'");
  }
  return c;
}

json align_json(const AlignConfig& c) {
  return {{"cycle_weight", c.cycle_weight}, {"learning_rate", c.learning_rate}, {"steps", c.steps},
          {"tolerance", c.tolerance},       {"plateau_steps", c.plateau_steps}};
}

AlignConfig align_from_json(const json& j) {
  AlignConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "cycle_weight") c.cycle_weight = v;
    else if (k == "learning_rate") c.learning_rate = v;
    else if (k == "steps") c.steps = v;
    else if (k == "tolerance") c.tolerance = v;
    else if (k == "plateau_steps") c.plateau_steps = v;
    else throw Error("unknown alignment config key '" + k + "'");
  }
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (decode.beam_size < 1) throw Error("beam size must be at least 1");
  if (!(decode.lm_weight >= 0)) throw Error("LM weight must be non-negative");
  if (!(lm.backoff > 0 && lm.backoff < 1)) throw Error("LM backoff must lie in (0, 1)");
  if (projection_dim < 0) throw Error("projection dimension must be non-negative");
  if (!(frame_period > 0)) throw Error("frame period must be positive");
  if (critic.hidden < 1 || critic.n_critic < 1 || critic.pairs < 1) throw Error("invalid critic config");
  if (align.steps < 0 || !(align.learning_rate > 0)) throw Error("invalid alignment config");
}

std::string ExperimentConfig::to_json() const {
  json j = {{"net", json::parse(net.to_json())},
            {"train", json::parse(train.to_json())},
            {"decode", {{"lm_weight", decode.lm_weight}, {"beam_size", decode.beam_size}}},
            {"lm", {{"backoff", lm.backoff}}},
            {"strategy", strategy_name(strategy)},
            {"critic", critic_json(critic)},
            {"align", align_json(align)},
            {"projection_dim", projection_dim},
            {"frame_period", frame_period},
            {"cmvn", cmvn}};
  return j.dump();
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("experiment config: ") + e.what());
  }
  if (!j.is_object()) throw Error("experiment config: expected a JSON object");
  ExperimentConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "net") {
      json base = json::parse(c.net.to_json());
      for (const auto& [nk, nv] : v.items()) {
        if (!base.contains(nk)) throw Error("unknown net config key '" + nk + "'");
        base[nk] = nv;
      }
      c.net = NetConfig::from_json(base.dump());
    } else if (k == "train") {
      c.train = TrainConfig::from_json(v.dump());
    } else if (k == "decode") {
      for (const auto& [dk, dv] : v.items()) {
        if (dk == "lm_weight") c.decode.lm_weight = dv;
        else if (dk == "beam_size") c.decode.beam_size = dv;
        else throw Error("unknown decode config key '" + dk + "'");
      }
    } else if (k == "lm") {
      for (const auto& [lk, lv] : v.items()) {
        if (lk == "backoff") c.lm.backoff = lv;
        else throw Error("unknown LM config key '" + lk + "'");
      }
    } else if (k == "strategy") {
      c.strategy = strategy_from_name(v.get<std::string>());
    } else if (k == "critic") {
      c.critic = critic_from_json(v);
    } else if (k == "align") {
      c.align = align_from_json(v);
    } else if (k == "projection_dim") {
      c.projection_dim = v;
    } else if (k == "frame_period") {
      c.frame_period = v;
    } else if (k == "cmvn") {
      c.cmvn = v;
    } else {
      throw Error("unknown experiment config key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Runs

const char* status_name(CellStatus s) {
  switch (s) {
    case CellStatus::kOk: return "ok";
    case CellStatus::kInfeasible: return "infeasible";
    case CellStatus::kFailed: return "failed";
  }
  return "failed";
}

bool ResultTable::any_failed() const {
  return std::any_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.status == CellStatus::kFailed; });
}

ResultRow run_cell(const ExperimentData& data, const CellSpec& cell) {
  ResultRow row;
  row.id = cell.id;
  row.hours = cell.hours;
  row.n_paired = cell.n_paired;
  row.seed = cell.seed;
  row.data_seed = cell.data_seed;
  row.train_seed = cell.train_seed;
  row.dropped_term = cell.dropped_term;
  row.cycle_enabled = cell.config.train.weights.cycle_enabled;
  row.strategy = cell.config.strategy;
  row.config_json = cell.config.to_json();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const ExperimentConfig& cfg = cell.config;
    cfg.validate();
    Corpus train = cell.hours > 0 ? subsample_speech(data.train, cell.hours, cfg.frame_period, cell.data_seed)
                                  : data.train;
    if (cell.hours <= 0) row.hours = train.duration_hours(cfg.frame_period);
    const std::size_t available = train.annotated().size();
    if (cell.n_paired > available) {
      row.status = CellStatus::kInfeasible;
      row.message = "N=" + std::to_string(cell.n_paired) + " exceeds the " + std::to_string(available) +
                    " annotated words available";
      return row;
    }
    const PairSet pairs = build_pair_set(train, cell.n_paired, derive_seed(cell.data_seed, 1));
    Corpus test = data.test;
    if (cfg.cmvn) {
      train = apply_cmvn(train);
      test = apply_cmvn(test);
    }
    NetConfig net = cfg.net;
    net.feature_dim = train.feature_dim();
    net.inventory_size = train.lexicon.inventory_size();
    TrainConfig tc = cfg.train;
    tc.seed = cell.train_seed;
    const TrigramLM lm = train_trigram_lm(data.train.transcripts(), data.train.lexicon.size(), cfg.lm);

    std::vector<UtteranceDecode> decodes;
    if (cfg.strategy == Strategy::kJoint) {
      const TrainResult tr = train_joint(train, pairs, net, tc);
      row.steps = tr.steps;
      if (tr.diverged) throw Error("training diverged");
      const JointSpace space(tr.model);
      decodes = decode_corpus(test, train.lexicon, space, lm, cfg.decode);
    } else {
      if (pairs.empty()) throw Error("separate learning needs at least one pair to fit the maps");
      const TrainResult tr = train_separate(train, net, tc, cfg.critic);
      row.steps = tr.steps;
      if (tr.diverged) throw Error("training diverged");
      const int d = cfg.projection_dim > 0 ? cfg.projection_dim : net.phonetic_dim;
      const SeparateAlignment al = fit_separate_alignment(tr.model, train, pairs, d, cfg.align);
      const SeparateSpace space(tr.model, al);
      decodes = decode_corpus(test, train.lexicon, space, lm, cfg.decode);
    }
    row.wer = word_error_rate(decodes);
  } catch (const std::exception& e) {
    row.status = CellStatus::kFailed;
    row.message = e.what();
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

void ExperimentGrid::validate() const {
  if (hours.empty() || n_paired.empty()) throw Error("experiment grid: empty hours or N list");
  if (repeats < 1) throw Error("experiment grid: repeats must be at least 1");
  for (double h : hours) {
    if (!(h >= 0)) throw Error("experiment grid: hours must be non-negative");
  }
}

std::uint64_t repeat_seed(std::uint64_t master, int r) {
  return r == 0 ? master : derive_seed(master, 1000 + static_cast<std::uint64_t>(r));
}

std::uint64_t cell_hash(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string format_hours(double h) {
  std::ostringstream os;
  os << std::setprecision(6) << h;
  return os.str();
}

void emit(ResultTable& table, ResultRow row, const RowCallback& on_row) {
  if (on_row) on_row(row);
  table.rows.push_back(std::move(row));
}

CellSpec base_cell(const ExperimentConfig& config, std::uint64_t seed, std::size_t n_paired) {
  CellSpec cell;
  cell.n_paired = n_paired;
  cell.seed = seed;
  cell.data_seed = derive_seed(seed, 1);
  cell.train_seed = derive_seed(seed, 2);
  cell.config = config;
  return cell;
}

}  // namespace

ResultTable run_spectrum(const ExperimentData& data, const ExperimentGrid& grid, const ExperimentConfig& config,
                         const RowCallback& on_row) {
  grid.validate();
  config.validate();
  ResultTable table;
  table.kind = "spectrum";
  for (int r = 0; r < grid.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(grid.seed, r);
    for (double h : grid.hours) {
      for (std::size_t n : grid.n_paired) {
        CellSpec cell = base_cell(config, seed, n);
        cell.id = "h" + format_hours(h) + "_n" + std::to_string(n);
        cell.hours = h;
        if (grid.seed_policy == SeedPolicy::kPerCell) cell.train_seed = derive_seed(seed, cell_hash(cell.id));
        emit(table, run_cell(data, cell), on_row);
      }
    }
  }
  return table;
}

ResultTable run_ablation(const ExperimentData& data, std::size_t n_paired, const std::vector<Term>& drop,
                         const ExperimentConfig& config, std::uint64_t seed, int repeats,
                         const RowCallback& on_row) {
  config.validate();
  for (Term t : drop) {
    if (t == Term::kCycle) throw Error("ablation: only the five joint terms can be dropped");
  }
  ResultTable table;
  table.kind = "ablation";
  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t s = repeat_seed(seed, r);
    CellSpec base = base_cell(config, s, n_paired);
    base.id = "none";
    base.dropped_term = "none";
    emit(table, run_cell(data, base), on_row);
    for (Term t : drop) {
      CellSpec cell = base;
      cell.id = std::string("drop_") + term_name(t);
      cell.dropped_term = term_name(t);
      cell.config.train.weights.enabled[static_cast<std::size_t>(t)] = false;
      emit(table, run_cell(data, cell), on_row);
    }
  }
  return table;
}

ResultTable run_cycle_study(const ExperimentData& data, const std::vector<std::size_t>& n_values,
                            const ExperimentConfig& config, std::uint64_t seed, int repeats,
                            const RowCallback& on_row) {
  config.validate();
  if (n_values.empty()) throw Error("cycle study: no N values");
  ResultTable table;
  table.kind = "cycle";
  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t s = repeat_seed(seed, r);
    for (std::size_t n : n_values) {
      for (bool on : {false, true}) {
        CellSpec cell = base_cell(config, s, n);
        cell.id = std::string(on ? "cycle" : "no_cycle") + "_n" + std::to_string(n);
        cell.config.train.weights.cycle_enabled = on;
        emit(table, run_cell(data, cell), on_row);
      }
    }
  }
  return table;
}

ResultTable run_strategy_comparison(const ExperimentData& data, std::size_t n_paired, const ExperimentConfig& config,
                                    std::uint64_t seed, int repeats, const RowCallback& on_row) {
  config.validate();
  ResultTable table;
  table.kind = "strategy";
  for (int r = 0; r < repeats; ++r) {
    const std::uint64_t s = repeat_seed(seed, r);
    for (Strategy st : {Strategy::kJoint, Strategy::kSeparate}) {
      CellSpec cell = base_cell(config, s, n_paired);
      cell.id = std::string(strategy_name(st)) + "_n" + std::to_string(n_paired);
      cell.config.strategy = st;
      emit(table, run_cell(data, cell), on_row);
    }
  }
  return table;
}

std::optional<Real> mean_wer(const ResultTable& table, const std::function<bool(const ResultRow&)>& keep) {
  Real sum = 0;
  int n = 0;
  for (const auto& r : table.rows) {
    if (r.status == CellStatus::kOk && r.wer && keep(r)) {
      sum += *r.wer;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

void write_result_csv(const ResultTable& table, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(10);
  auto wer = [](const ResultRow& r) { return r.wer ? std::to_string(*r.wer) : std::string(); };
  if (table.kind == "spectrum") {
    out << "hours,n_paired,wer,seed,status\n";
    for (const auto& r : table.rows) {
      out << r.hours << ',' << r.n_paired << ',' << wer(r) << ',' << r.seed << ',' << status_name(r.status) << '\n';
    }
  } else if (table.kind == "ablation") {
    out << "dropped_term,n_paired,wer,seed\n";
    for (const auto& r : table.rows) out << r.dropped_term << ',' << r.n_paired << ',' << wer(r) << ',' << r.seed << '\n';
  } else if (table.kind == "cycle") {
    out << "cycle_enabled,n_paired,wer,seed\n";
    for (const auto& r : table.rows) {
      out << (r.cycle_enabled ? 1 : 0) << ',' << r.n_paired << ',' << wer(r) << ',' << r.seed << '\n';
    }
  } else if (table.kind == "strategy") {
    out << "strategy,n_paired,wer,seed\n";
    for (const auto& r : table.rows) {
      out << strategy_name(r.strategy) << ',' << r.n_paired << ',' << wer(r) << ',' << r.seed << '\n';
    }
  } else {
    throw Error("unknown result table kind '" + table.kind + "'");
  }
}

void write_manifest(const ResultTable& table, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  json rows = json::array();
  for (const auto& r : table.rows) {
    json j = {{"id", r.id},
              {"hours", r.hours},
              {"n_paired", r.n_paired},
              {"wer", r.wer ? json(*r.wer) : json(nullptr)},
              {"seed", r.seed},
              {"data_seed", r.data_seed},
              {"train_seed", r.train_seed},
              {"status", status_name(r.status)},
              {"message", r.message},
              {"steps", r.steps},
              {"wall_seconds", r.wall_seconds},
              {"dropped_term", r.dropped_term},
              {"cycle_enabled", r.cycle_enabled},
              {"strategy", strategy_name(r.strategy)},
              {"config", json::parse(r.config_json)}};
    rows.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << json{{"kind", table.kind}, {"rows", rows}}.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Contours

namespace {

using P2 = std::array<double, 2>;

double orient(const P2& a, const P2& b, const P2& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

// True when d lies strictly inside the circumcircle of the counter-clockwise
// triangle (a, b, c).
bool in_circumcircle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const double adx = a[0] - d[0], ady = a[1] - d[1];
  const double bdx = b[0] - d[0], bdy = b[1] - d[1];
  const double cdx = c[0] - d[0], cdy = c[1] - d[1];
  const double det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) -
                     (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
                     (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
  return det > 1e-12;
}

// Barycentric coordinates of q in triangle (a, b, c).
std::array<double, 3> barycentric(const P2& a, const P2& b, const P2& c, const P2& q) {
  const double area = orient(a, b, c);
  return {orient(q, b, c) / area, orient(a, q, c) / area, orient(a, b, q) / area};
}

}  // namespace

std::vector<std::array<int, 3>> delaunay(const std::vector<P2>& xy) {
  const int n = static_cast<int>(xy.size());
  if (n < 3) throw Error("triangulation needs at least 3 points, got " + std::to_string(n));
  double min_x = xy[0][0], max_x = xy[0][0], min_y = xy[0][1], max_y = xy[0][1];
  for (const auto& p : xy) {
    min_x = std::min(min_x, p[0]), max_x = std::max(max_x, p[0]);
    min_y = std::min(min_y, p[1]), max_y = std::max(max_y, p[1]);
  }
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (std::abs(xy[i][0] - xy[j][0]) <= 1e-12 * span && std::abs(xy[i][1] - xy[j][1]) <= 1e-12 * span) {
        throw Error("triangulation: duplicate point " + std::to_string(i) + " and " + std::to_string(j));
      }
    }
  }
  bool collinear = true;
  for (int k = 2; k < n && collinear; ++k) {
    if (std::abs(orient(xy[0], xy[1], xy[k])) > 1e-12 * span * span) collinear = false;
  }
  if (collinear) throw Error("triangulation: all points are collinear");

  std::vector<P2> pts = xy;
  const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
  pts.push_back({cx - 20 * span, cy - 10 * span});
  pts.push_back({cx + 20 * span, cy - 10 * span});
  pts.push_back({cx, cy + 20 * span});
  std::vector<std::array<int, 3>> tris = {{n, n + 1, n + 2}};
  for (int p = 0; p < n; ++p) {
    std::vector<std::array<int, 3>> keep;
    std::vector<std::array<int, 2>> edges;
    for (const auto& t : tris) {
      if (in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p])) {
        for (int e = 0; e < 3; ++e) edges.push_back({t[e], t[(e + 1) % 3]});
      } else {
        keep.push_back(t);
      }
    }
    // Boundary of the cavity: edges not shared by two removed triangles.
    for (std::size_t i = 0; i < edges.size(); ++i) {
      bool shared = false;
      for (std::size_t j = 0; j < edges.size() && !shared; ++j) {
        shared = i != j && edges[i][0] == edges[j][1] && edges[i][1] == edges[j][0];
      }
      if (!shared) keep.push_back({edges[i][0], edges[i][1], p});
    }
    tris = std::move(keep);
  }
  std::vector<std::array<int, 3>> out;
  for (const auto& t : tris) {
    if (t[0] < n && t[1] < n && t[2] < n && std::abs(orient(pts[t[0]], pts[t[1]], pts[t[2]])) > 1e-14 * span * span) {
      out.push_back(t);
    }
  }
  return out;
}

WerSurface::WerSurface(std::vector<SurfacePoint> points) : points_(std::move(points)) {
  if (points_.size() < 3) throw Error("contour needs at least 3 points, got " + std::to_string(points_.size()));
  for (const auto& p : points_) {
    if (!(p.hours > 0 && p.n_paired > 0)) throw Error("contour points need positive hours and N (log axes)");
    xy_.push_back({std::log10(p.hours), std::log10(p.n_paired)});
  }
  triangles_ = delaunay(xy_);
}

std::optional<Real> WerSurface::operator()(double hours, double n_paired) const {
  if (!(hours > 0 && n_paired > 0)) return std::nullopt;
  const P2 q = {std::log10(hours), std::log10(n_paired)};
  for (const auto& t : triangles_) {
    const auto w = barycentric(xy_[t[0]], xy_[t[1]], xy_[t[2]], q);
    if (w[0] >= -1e-9 && w[1] >= -1e-9 && w[2] >= -1e-9) {
      return w[0] * points_[t[0]].wer + w[1] * points_[t[1]].wer + w[2] * points_[t[2]].wer;
    }
  }
  return std::nullopt;
}

std::vector<SurfacePoint> spectrum_points(const ResultTable& table) {
  std::map<std::pair<double, std::size_t>, std::pair<Real, int>> acc;
  for (const auto& r : table.rows) {
    if (r.status != CellStatus::kOk || !r.wer) continue;
    auto& a = acc[{r.hours, r.n_paired}];
    a.first += *r.wer;
    a.second += 1;
  }
  std::vector<SurfacePoint> out;
  for (const auto& [key, a] : acc) {
    out.push_back({key.first, static_cast<double>(key.second), a.first / a.second});
  }
  return out;
}

std::vector<ContourSample> emit_contour(const std::vector<SurfacePoint>& all_points, int resolution) {
  if (resolution < 2) throw Error("contour resolution must be at least 2");
  std::vector<SurfacePoint> points;
  for (const auto& p : all_points) {
    if (p.hours > 0 && p.n_paired > 0) points.push_back(p);
  }
  const WerSurface surface(points);
  double lh0 = 1e300, lh1 = -1e300, ln0 = 1e300, ln1 = -1e300;
  for (const auto& p : points) {
    lh0 = std::min(lh0, std::log10(p.hours)), lh1 = std::max(lh1, std::log10(p.hours));
    ln0 = std::min(ln0, std::log10(p.n_paired)), ln1 = std::max(ln1, std::log10(p.n_paired));
  }
  std::vector<ContourSample> out;
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      const double h = std::pow(10.0, lh0 + (lh1 - lh0) * i / (resolution - 1));
      const double n = std::pow(10.0, ln0 + (ln1 - ln0) * j / (resolution - 1));
      if (auto w = surface(h, n)) out.push_back({h, n, *w});
    }
  }
  return out;
}

void write_contour_csv(const std::vector<ContourSample>& samples, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(10) << "hours,n_paired,wer_interp\n";
  for (const auto& s : samples) out << s.hours << ',' << s.n_paired << ',' << s.wer << '\n';
}

}  // namespace phonoalign
