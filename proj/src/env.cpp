#include "gridmind/env.hpp"

#include <algorithm>
#include <cmath>

namespace gridmind::env {

std::vector<double> Observation::channels() const {
  const std::size_t a = tiles.size();
  std::vector<double> out(3 * a, 0.0);
  for (std::size_t i = 0; i < a; ++i) {
    out[static_cast<std::size_t>(tiles[i]) * a + i] = 1.0;
  }
  return out;
}

int Observation::count(Tile t) const {
  return static_cast<int>(std::count(tiles.begin(), tiles.end(), t));
}

Observation EnvState::observe() const {
  Observation o;
  o.n = underlying.n();
  o.tiles.resize(revealed.size());
  for (std::size_t i = 0; i < revealed.size(); ++i) {
    if (!revealed[i]) {
      o.tiles[i] = Tile::Masked;
    } else {
      o.tiles[i] = underlying.red(static_cast<int>(i)) ? Tile::Red : Tile::White;
    }
  }
  return o;
}

EnvState reset(const Board& board, Rng& rng) {
  const int reds = board.red_count();
  if (reds == 0) throw ValidationError("cannot play an all-white board");
  EnvState s;
  s.underlying = board;
  s.revealed.assign(static_cast<std::size_t>(board.area()), 0);
  s.total_reds = reds;
  std::size_t pick = uniform_index(rng, static_cast<std::size_t>(reds));
  for (int i = 0; i < board.area(); ++i) {
    if (board.red(i) && pick-- == 0) {
      s.revealed[static_cast<std::size_t>(i)] = 1;
      break;
    }
  }
  s.reds_revealed = 1;
  s.done = reds == 1;
  return s;
}

EnvState reset(const Board& board, std::uint64_t seed) {
  Rng rng(seed);
  return reset(board, rng);
}

StepResult step(EnvState& s, int action, const EnvConfig& cfg) {
  if (s.done) throw std::logic_error("step on a finished episode");
  if (action < 0 || action >= s.underlying.area()) {
    throw std::out_of_range("action " + std::to_string(action) + " out of range");
  }
  StepResult r;
  auto& cell = s.revealed[static_cast<std::size_t>(action)];
  ++s.steps;
  if (cell) {
    r.reward = -2;
  } else if (!s.underlying.red(action)) {
    cell = 1;
    ++s.whites_revealed;
    r.reward = -1;
  } else {
    cell = 1;
    ++s.reds_revealed;
    if (s.reds_revealed == s.total_reds) {
      r.reward = cfg.final_red_bonus_additive ? 6 : 5;
      s.done = true;
    } else {
      r.reward = 1;
    }
  }
  if (s.steps >= cfg.step_cap) s.done = true;
  r.done = s.done;
  r.obs = s.observe();
  return r;
}

int nn_heuristic_episode(const Board& board, Rng& rng) {
  EnvState s = reset(board, rng);
  const int n = board.n();
  std::vector<int> frontier, covered;
  while (s.reds_revealed < s.total_reds) {
    frontier.clear();
    covered.clear();
    for (int i = 0; i < board.area(); ++i) {
      if (s.revealed[static_cast<std::size_t>(i)]) continue;
      covered.push_back(i);
      const int r = i / n, c = i % n;
      const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (!board.in_bounds(rr, cc)) continue;
        const int j = board.index(rr, cc);
        if (s.revealed[static_cast<std::size_t>(j)] && board.red(j)) {
          frontier.push_back(i);
          break;
        }
      }
    }
    const auto& pool = frontier.empty() ? covered : frontier;
    const int pick = pool[uniform_index(rng, pool.size())];
    s.revealed[static_cast<std::size_t>(pick)] = 1;
    if (board.red(pick)) {
      ++s.reds_revealed;
    } else {
      ++s.whites_revealed;
    }
  }
  return s.whites_revealed;
}

int nn_heuristic_episode(const Board& board, std::uint64_t seed) {
  Rng rng(seed);
  return nn_heuristic_episode(board, rng);
}

Json HeuristicStats::to_json() const {
  return {{"board_id", board_id}, {"mean", mean}, {"std", std}, {"runs", runs}};
}

HeuristicStats HeuristicStats::from_json(const Json& j) {
  return {j.at("board_id").get<std::string>(), j.at("mean").get<double>(),
          j.at("std").get<double>(), j.at("runs").get<int>()};
}

HeuristicStats heuristic_stats(const Board& board, int runs, std::uint64_t seed,
                               std::string board_id) {
  if (runs < 1) throw ValidationError("heuristic runs must be at least 1");
  Rng rng(seed);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < runs; ++i) {
    const double w = nn_heuristic_episode(board, rng);
    sum += w;
    sq += w * w;
  }
  const double mean = sum / runs;
  const double var = std::max(0.0, sq / runs - mean * mean);
  return {std::move(board_id), mean, std::sqrt(var), runs};
}

double z_score(int whites, const HeuristicStats& stats) {
  const double d = whites - stats.mean;
  if (std::abs(d) < 1e-12) return 0.0;
  return d / std::max(stats.std, 1e-9);
}

std::uint64_t heuristic_seed(const Board& board, std::uint64_t seed) {
  return derive_seed(seed, stable_hash(board.to_string()));
}

HeuristicTable heuristic_table(const BoardDataset& dataset, int runs,
                               std::uint64_t seed) {
  HeuristicTable t;
  for (const auto& e : dataset.entries()) {
    if (e.board.red_count() == 0) continue;
    t.emplace(e.id, heuristic_stats(e.board, runs, heuristic_seed(e.board, seed), e.id));
  }
  return t;
}

Json EpisodeTrace::to_json() const {
  return {{"board_id", board_id}, {"seed", seed},   {"actions", actions},
          {"rewards", rewards},   {"whites", whites}, {"z", z}};
}

EpisodeTrace EpisodeTrace::from_json(const Json& j) {
  EpisodeTrace t;
  t.board_id = j.at("board_id").get<std::string>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.actions = j.at("actions").get<std::vector<int>>();
  t.rewards = j.at("rewards").get<std::vector<int>>();
  t.whites = j.at("whites").get<int>();
  t.z = j.at("z").get<double>();
  return t;
}

void save_traces(const std::filesystem::path& path,
                 const std::vector<EpisodeTrace>& traces) {
  std::vector<Json> lines;
  lines.reserve(traces.size());
  for (const auto& t : traces) lines.push_back(t.to_json());
  write_jsonl(path, lines);
}

std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path) {
  std::vector<EpisodeTrace> out;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    try {
      out.push_back(EpisodeTrace::from_json(j));
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

EnvState replay(const Board& board, std::uint64_t seed,
                const std::vector<int>& actions, const EnvConfig& cfg) {
  EnvState s = reset(board, seed);
  for (int a : actions) step(s, a, cfg);
  return s;
}

}  // namespace gridmind::env
