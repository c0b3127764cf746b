#ifndef GRIDMIND_SERVICE_HPP_
#define GRIDMIND_SERVICE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridmind/board.hpp"
#include "gridmind/env.hpp"

// Session store behind the human-facing HTTP API: tile-reveal play, GSP
// single-tile trials, and description collection. All state is derived from
// an append-only JSONL event log.
namespace gridmind::service {

inline constexpr const char* kGspPrompt =
    "What should be the underlying color of the covered greyed tile such that "
    "the board is generated by a very simple rule?";
inline constexpr const char* kDescribePrompt =
    "Your goal is to describe this pattern of red squares in words. Be as "
    "detailed as possible. Someone should be able to reproduce the entire "
    "board given your description. You may be rewarded based on how detailed "
    "your description is.";

// Carries the HTTP status to report.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, const std::string& message)
      : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::filesystem::path log_path = "events.jsonl";
  std::map<std::string, BoardDataset> datasets;
  int gsp_n = 4;
  int gsp_chains = 4;
  int describe_boards = 25;
  int heuristic_runs = 1000;
  std::uint64_t heuristic_seed = 0;
  env::EnvConfig env;
  // Seeds session ids and random choices; unguessable ids when absent.
  std::optional<std::uint64_t> seed;
};

enum class Mode { Play, Gsp, Describe };
std::string to_string(Mode m);
Mode parse_mode(const std::string& name);

struct Chain {
  std::string id;
  Board board;
  int masked = 0;
  int trials = 0;
  std::vector<Board> history;  // board after each trial
};

struct Session {
  std::string id;
  Mode mode = Mode::Play;
  std::string dataset;
  std::string created_at;
  // play
  std::string board_id;
  std::uint64_t env_seed = 0;
  env::EnvState state;
  std::vector<int> actions;
  std::vector<int> rewards;
  std::optional<double> z;
  // gsp
  std::string chain_id;
  // describe
  std::vector<std::string> assignment;
  std::vector<Board> assigned_boards;
  std::size_t next = 0;
  std::set<std::string> described;
};

class SessionService {
 public:
  // Replays the existing log at cfg.log_path, if any.
  explicit SessionService(ServiceConfig cfg);

  // {mode, dataset?} -> {session_id, mode, board_view, ...}
  Json create_session(const Json& request);
  // {tile} -> {color, reward, done, z_score?}
  Json reveal(const std::string& session_id, const Json& request);
  // {value, tile?} -> {next_masked_tile, board_view, trials}
  Json gsp(const std::string& session_id, const Json& request);
  // {text, board_id?} -> {accepted, next_board?, completed}
  Json describe(const std::string& session_id, const Json& request);
  Json view(const std::string& session_id) const;

  // JSONL text of descriptions, gsp-boards or play-traces.
  std::string export_kind(const std::string& kind) const;

  std::size_t session_count() const;
  std::size_t event_count() const;
  env::HeuristicStats heuristic(const Board& board) const;

 private:
  Json apply(const Json& event, bool live);
  Json append(const std::string& session_id, const std::string& kind, Json payload);
  Session& find(const std::string& id);
  const Session& find(const std::string& id) const;
  Json board_view(const Session& s) const;
  Json describe_view(const Session& s) const;
  std::string new_id(const std::string& prefix);
  const env::HeuristicStats& cached_stats(const Board& board) const;

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::vector<std::string> session_order_;
  std::map<std::string, Chain> chains_;
  std::vector<std::string> chain_order_;
  std::vector<Json> descriptions_;
  mutable std::map<std::string, env::HeuristicStats> heuristic_cache_;
  std::size_t events_ = 0;
  Rng rng_;
};

// HTTP front end; static files from `static_dir` are served at /.
class HttpServer {
 public:
  HttpServer(SessionService& service, std::filesystem::path static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port (an ephemeral one when port is 0).
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gridmind::service

#endif  // GRIDMIND_SERVICE_HPP_
