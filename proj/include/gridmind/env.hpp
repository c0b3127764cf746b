#ifndef GRIDMIND_ENV_HPP_
#define GRIDMIND_ENV_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gridmind/board.hpp"

// The tile-reveal task: a hidden board starts with one red tile shown and
// the player uncovers tiles until every red one is visible.
namespace gridmind::env {

struct EnvConfig {
  int step_cap = 50;
  // When true the last red pays +1 +5; otherwise it pays +5 alone.
  bool final_red_bonus_additive = false;
};

enum class Tile : std::uint8_t { Masked = 0, Red = 1, White = 2 };

struct Observation {
  int n = 0;
  std::vector<Tile> tiles;  // row-major

  // Three n x n binary planes (masked, red, white), channel-major.
  std::vector<double> channels() const;
  int count(Tile t) const;
};

struct EnvState {
  Board underlying;
  std::vector<std::uint8_t> revealed;
  int steps = 0;
  bool done = false;
  int whites_revealed = 0;
  int reds_revealed = 0;
  int total_reds = 0;

  Observation observe() const;
};

struct StepResult {
  Observation obs;
  int reward = 0;
  bool done = false;
};

// Reveals one uniformly chosen red tile. A single-red board is done at once.
EnvState reset(const Board& board, Rng& rng);
EnvState reset(const Board& board, std::uint64_t seed);

StepResult step(EnvState& state, int action, const EnvConfig& cfg = {});

// Nearest-neighbour heuristic: uniform over covered tiles 4-adjacent to a
// revealed red, else uniform over all covered tiles, until every red is
// revealed. Returns whites revealed.
int nn_heuristic_episode(const Board& board, Rng& rng);
int nn_heuristic_episode(const Board& board, std::uint64_t seed);

struct HeuristicStats {
  std::string board_id;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int runs = 0;

  Json to_json() const;
  static HeuristicStats from_json(const Json& j);
};

HeuristicStats heuristic_stats(const Board& board, int runs, std::uint64_t seed,
                               std::string board_id = {});

// (whites - mean) / max(std, 1e-9); 0 when the std is degenerate and
// whites equals the mean.
double z_score(int whites, const HeuristicStats& stats);

// Heuristic stats for every entry, each board seeded from its own content so
// stats do not depend on dataset order.
using HeuristicTable = std::map<std::string, HeuristicStats>;
HeuristicTable heuristic_table(const BoardDataset& dataset, int runs,
                               std::uint64_t seed);
std::uint64_t heuristic_seed(const Board& board, std::uint64_t seed);

struct EpisodeTrace {
  std::string board_id;
  std::uint64_t seed = 0;
  std::vector<int> actions;
  std::vector<int> rewards;
  int whites = 0;
  double z = 0.0;

  Json to_json() const;
  static EpisodeTrace from_json(const Json& j);
};

void save_traces(const std::filesystem::path& path,
                 const std::vector<EpisodeTrace>& traces);
std::vector<EpisodeTrace> load_traces(const std::filesystem::path& path);

// Replays `actions` from reset(board, seed); returns the final state.
EnvState replay(const Board& board, std::uint64_t seed,
                const std::vector<int>& actions, const EnvConfig& cfg = {});

}  // namespace gridmind::env

#endif  // GRIDMIND_ENV_HPP_
