#include "gridmind/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>

namespace gridmind::service {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Play: return "play";
    case Mode::Gsp: return "gsp";
    case Mode::Describe: return "describe";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  if (name == "play") return Mode::Play;
  if (name == "gsp") return Mode::Gsp;
  if (name == "describe") return Mode::Describe;
  throw ApiError(400, "unknown mode '" + name + "'");
}

namespace {

std::string now_iso() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const std::time_t t = system_clock::to_time_t(now);
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  const std::size_t len = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + len, sizeof buf - len, ".%03dZ", static_cast<int>(ms));
  return buf;
}

Json tiles_json(const env::Observation& obs) {
  Json tiles = Json::array();
  for (auto t : obs.tiles) {
    tiles.push_back(t == env::Tile::Masked ? "masked" : t == env::Tile::Red ? "red" : "white");
  }
  return tiles;
}

Json full_view(const Board& b, int masked = -1) {
  Json tiles = Json::array();
  for (int i = 0; i < b.area(); ++i) {
    tiles.push_back(i == masked ? "masked" : b.red(i) ? "red" : "white");
  }
  return {{"n", b.n()}, {"tiles", tiles}};
}

int int_field(const Json& req, const char* key) {
  if (!req.is_object() || !req.contains(key) || !req.at(key).is_number_integer()) {
    throw ApiError(400, std::string("expected integer field '") + key + "'");
  }
  return req.at(key).get<int>();
}

}  // namespace

SessionService::SessionService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.gsp_n < 2 || cfg_.gsp_n > Board::kMaxSide) throw ValidationError("gsp_n out of range");
  if (cfg_.gsp_chains < 1) throw ValidationError("gsp_chains must be positive");
  if (cfg_.describe_boards < 1) throw ValidationError("describe_boards must be positive");
  if (cfg_.heuristic_runs < 1) throw ValidationError("heuristic_runs must be positive");
  if (std::filesystem::exists(cfg_.log_path)) {
    read_jsonl(cfg_.log_path, [&](const Json& e, std::size_t) {
      apply(e, false);
      ++events_;
    });
  } else if (cfg_.log_path.has_parent_path()) {
    std::filesystem::create_directories(cfg_.log_path.parent_path());
  }
  rng_.seed(cfg_.seed ? derive_seed(*cfg_.seed, events_) : std::random_device{}() ^
                                                             (std::uint64_t{std::random_device{}()} << 32));
}

std::string SessionService::new_id(const std::string& prefix) {
  for (;;) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                  static_cast<unsigned long long>(rng_()));
    std::string id = prefix + buf;
    if (!sessions_.count(id) && !chains_.count(id)) return id;
  }
}

const env::HeuristicStats& SessionService::cached_stats(const Board& board) const {
  const std::string key = board.to_string();
  auto it = heuristic_cache_.find(key);
  if (it == heuristic_cache_.end()) {
    it = heuristic_cache_
             .emplace(key, env::heuristic_stats(board, cfg_.heuristic_runs,
                                                env::heuristic_seed(board, cfg_.heuristic_seed)))
             .first;
  }
  return it->second;
}

env::HeuristicStats SessionService::heuristic(const Board& board) const {
  std::lock_guard lock(mu_);
  return cached_stats(board);
}

Session& SessionService::find(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
  return it->second;
}

const Session& SessionService::find(const std::string& id) const {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
  return it->second;
}

Json SessionService::append(const std::string& session_id, const std::string& kind,
                            Json payload) {
  Json e = {{"ts", now_iso()}, {"session_id", session_id}, {"kind", kind},
            {"payload", std::move(payload)}};
  {
    std::ofstream out(cfg_.log_path, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot append to " + cfg_.log_path.string());
    out << e.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("write failed on " + cfg_.log_path.string());
  }
  ++events_;
  return apply(e, true);
}

Json SessionService::board_view(const Session& s) const {
  switch (s.mode) {
    case Mode::Play: {
      const auto obs = s.state.observe();
      return {{"n", obs.n}, {"tiles", tiles_json(obs)}};
    }
    case Mode::Gsp: {
      const Chain& c = chains_.at(s.chain_id);
      return full_view(c.board, c.masked);
    }
    case Mode::Describe:
      if (s.next < s.assigned_boards.size()) return full_view(s.assigned_boards[s.next]);
      return nullptr;
  }
  return nullptr;
}

Json SessionService::describe_view(const Session& s) const {
  Json j = {{"progress", {{"done", s.next}, {"total", s.assignment.size()}}},
            {"completed", s.next >= s.assignment.size()}};
  if (s.next < s.assignment.size()) {
    j["board_id"] = s.assignment[s.next];
    j["board_view"] = board_view(s);
    j["prompt"] = kDescribePrompt;
  }
  return j;
}

Json SessionService::apply(const Json& e, bool live) {
  (void)live;
  const std::string id = e.at("session_id").get<std::string>();
  const std::string kind = e.at("kind").get<std::string>();
  const Json& p = e.at("payload");
  if (kind == "create") {
    Session s;
    s.id = id;
    s.mode = parse_mode(p.at("mode").get<std::string>());
    s.created_at = e.value("ts", "");
    Json out = {{"session_id", id}, {"mode", to_string(s.mode)}};
    switch (s.mode) {
      case Mode::Play:
        s.dataset = p.at("dataset").get<std::string>();
        s.board_id = p.at("board_id").get<std::string>();
        s.env_seed = p.at("seed").get<std::uint64_t>();
        s.state = env::reset(Board::parse(p.at("board").get<std::string>()), s.env_seed);
        out["board_id"] = s.board_id;
        out["board_view"] = board_view(s);
        break;
      case Mode::Gsp: {
        s.chain_id = p.at("chain_id").get<std::string>();
        if (p.contains("new_chain")) {
          Chain c;
          c.id = s.chain_id;
          c.board = Board::parse(p.at("new_chain").at("board").get<std::string>());
          c.masked = p.at("new_chain").at("masked").get<int>();
          chains_[c.id] = c;
          chain_order_.push_back(c.id);
        }
        const Chain& c = chains_.at(s.chain_id);
        out["chain_id"] = c.id;
        out["masked_tile"] = c.masked;
        out["trials"] = c.trials;
        out["prompt"] = kGspPrompt;
        out["board_view"] = full_view(c.board, c.masked);
        break;
      }
      case Mode::Describe:
        s.dataset = p.at("dataset").get<std::string>();
        for (const auto& a : p.at("assignment")) {
          s.assignment.push_back(a.at("board_id").get<std::string>());
          s.assigned_boards.push_back(Board::parse(a.at("board").get<std::string>()));
        }
        out.update(describe_view(s));
        break;
    }
    sessions_[id] = std::move(s);
    session_order_.push_back(id);
    return out;
  }
  Session& s = find(id);
  if (kind == "reveal") {
    const int tile = p.at("tile").get<int>();
    const auto r = env::step(s.state, tile, cfg_.env);
    s.actions.push_back(tile);
    s.rewards.push_back(r.reward);
    Json out = {{"color", s.state.underlying.red(tile) ? "red" : "white"},
                {"reward", r.reward},
                {"done", r.done},
                {"board_view", board_view(s)}};
    if (r.done) {
      s.z = env::z_score(s.state.whites_revealed, cached_stats(s.state.underlying));
      out["z_score"] = *s.z;
      out["whites"] = s.state.whites_revealed;
    }
    return out;
  }
  if (kind == "gsp") {
    Chain& c = chains_.at(s.chain_id);
    const int tile = p.at("tile").get<int>();
    c.board.set(tile, p.at("value").get<int>() != 0);
    c.trials += 1;
    c.history.push_back(c.board);
    c.masked = p.at("next_masked").get<int>();
    return {{"next_masked_tile", c.masked},
            {"board_view", full_view(c.board, c.masked)},
            {"trials", c.trials},
            {"chain_id", c.id}};
  }
  if (kind == "description") {
    const std::string board = p.at("board_id").get<std::string>();
    descriptions_.push_back(
        {{"board_id", board}, {"text", p.at("text").get<std::string>()}, {"source", "human"}});
    s.described.insert(board);
    s.next += 1;
    Json out = {{"accepted", true}};
    out.update(describe_view(s));
    if (s.next < s.assignment.size()) {
      out["next_board"] = {{"board_id", s.assignment[s.next]}, {"board_view", board_view(s)}};
    }
    return out;
  }
  throw ValidationError("unknown event kind '" + kind + "'");
}

Json SessionService::create_session(const Json& req) {
  std::lock_guard lock(mu_);
  if (!req.is_object() || !req.contains("mode") || !req.at("mode").is_string()) {
    throw ApiError(400, "expected {mode}");
  }
  const Mode mode = parse_mode(req.at("mode").get<std::string>());
  Json payload = {{"mode", to_string(mode)}};
  const BoardDataset* ds = nullptr;
  std::string ds_name;
  if (mode != Mode::Gsp) {
    if (!req.contains("dataset") || !req.at("dataset").is_string()) {
      throw ApiError(400, "dataset required for " + to_string(mode));
    }
    ds_name = req.at("dataset").get<std::string>();
    auto it = cfg_.datasets.find(ds_name);
    if (it == cfg_.datasets.end()) throw ApiError(400, "unknown dataset '" + ds_name + "'");
    ds = &it->second;
    payload["dataset"] = ds_name;
  }
  const std::string id = new_id("");
  switch (mode) {
    case Mode::Play: {
      const BoardDataset playable = ds->playable();
      if (playable.empty() || playable.total_weight() <= 0.0) {
        throw ApiError(400, "dataset '" + ds_name + "' has no playable boards");
      }
      const auto& entry = playable.at(playable.sample_index(rng_));
      payload["board_id"] = entry.id;
      payload["board"] = entry.board.to_string();
      payload["seed"] = rng_();
      break;
    }
    case Mode::Gsp: {
      std::string chain;
      if (static_cast<int>(chains_.size()) < cfg_.gsp_chains) {
        chain = new_id("chain-");
        Board b(cfg_.gsp_n);
        for (int i = 0; i < b.area(); ++i) b.set(i, uniform01(rng_) < 0.5);
        payload["new_chain"] = {
            {"board", b.to_string()},
            {"masked", static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(b.area())))}};
      } else {
        chain = chain_order_.front();
        for (const auto& c : chain_order_) {
          if (chains_.at(c).trials < chains_.at(chain).trials) chain = c;
        }
      }
      payload["chain_id"] = chain;
      break;
    }
    case Mode::Describe: {
      if (ds->empty()) throw ApiError(400, "dataset '" + ds_name + "' is empty");
      std::vector<std::size_t> idx(ds->size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng_);
      idx.resize(std::min(idx.size(), static_cast<std::size_t>(cfg_.describe_boards)));
      Json a = Json::array();
      for (auto i : idx) a.push_back({{"board_id", ds->at(i).id}, {"board", ds->at(i).board.to_string()}});
      payload["assignment"] = a;
      break;
    }
  }
  return append(id, "create", payload);
}

Json SessionService::reveal(const std::string& id, const Json& req) {
  std::lock_guard lock(mu_);
  const Session& s = find(id);
  if (s.mode != Mode::Play) throw ApiError(400, "session is not in play mode");
  const int tile = int_field(req, "tile");
  if (s.state.done) throw ApiError(409, "episode is done");
  if (tile < 0 || tile >= s.state.underlying.area()) {
    throw ApiError(400, "tile " + std::to_string(tile) + " out of range");
  }
  return append(id, "reveal", {{"tile", tile}});
}

Json SessionService::gsp(const std::string& id, const Json& req) {
  std::lock_guard lock(mu_);
  const Session& s = find(id);
  if (s.mode != Mode::Gsp) throw ApiError(400, "session is not in gsp mode");
  const int value = int_field(req, "value");
  if (value != 0 && value != 1) throw ApiError(400, "value must be 0 or 1");
  const Chain& c = chains_.at(s.chain_id);
  if (req.contains("tile") && (!req.at("tile").is_number_integer() ||
                               req.at("tile").get<int>() != c.masked)) {
    throw ApiError(409, "masked tile has moved on; reload the session");
  }
  const int area = c.board.area();
  int next = static_cast<int>(uniform_index(rng_, static_cast<std::size_t>(area - 1)));
  if (next >= c.masked) ++next;
  return append(id, "gsp", {{"tile", c.masked}, {"value", value}, {"next_masked", next}});
}

Json SessionService::describe(const std::string& id, const Json& req) {
  std::lock_guard lock(mu_);
  const Session& s = find(id);
  if (s.mode != Mode::Describe) throw ApiError(400, "session is not in describe mode");
  if (!req.is_object() || !req.contains("text") || !req.at("text").is_string()) {
    throw ApiError(400, "expected {text}");
  }
  const std::string text = req.at("text").get<std::string>();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ApiError(400, "empty description");
  }
  if (req.contains("board_id")) {
    const std::string b = req.at("board_id").is_string() ? req.at("board_id").get<std::string>() : "";
    if (s.described.count(b)) throw ApiError(409, "board '" + b + "' already described");
    if (s.next >= s.assignment.size() || b != s.assignment[s.next]) {
      throw ApiError(409, "board '" + b + "' is not the current board");
    }
  }
  if (s.next >= s.assignment.size()) throw ApiError(409, "session is complete");
  return append(id, "description", {{"board_id", s.assignment[s.next]}, {"text", text}});
}

Json SessionService::view(const std::string& id) const {
  std::lock_guard lock(mu_);
  const Session& s = find(id);
  Json out = {{"session_id", id}, {"mode", to_string(s.mode)}};
  switch (s.mode) {
    case Mode::Play:
      out["board_id"] = s.board_id;
      out["board_view"] = board_view(s);
      out["done"] = s.state.done;
      out["steps"] = s.state.steps;
      if (s.z) out["z_score"] = *s.z;
      break;
    case Mode::Gsp: {
      const Chain& c = chains_.at(s.chain_id);
      out["chain_id"] = c.id;
      out["masked_tile"] = c.masked;
      out["trials"] = c.trials;
      out["prompt"] = kGspPrompt;
      out["board_view"] = board_view(s);
      break;
    }
    case Mode::Describe:
      out.update(describe_view(s));
      break;
  }
  return out;
}

std::string SessionService::export_kind(const std::string& kind) const {
  std::lock_guard lock(mu_);
  std::string out;
  if (kind == "descriptions") {
    for (const auto& d : descriptions_) out += d.dump() + "\n";
  } else if (kind == "gsp-boards") {
    BoardDataset ds;
    for (const auto& id : chain_order_) {
      for (const auto& b : chains_.at(id).history) ds.accumulate(b, 1.0, "gsp-");
    }
    for (const auto& j : ds.to_jsonl()) out += j.dump() + "\n";
  } else if (kind == "play-traces") {
    for (const auto& id : session_order_) {
      const Session& s = sessions_.at(id);
      if (s.mode != Mode::Play || !s.state.done) continue;
      env::EpisodeTrace t;
      t.board_id = s.board_id;
      t.seed = s.env_seed;
      t.actions = s.actions;
      t.rewards = s.rewards;
      t.whites = s.state.whites_revealed;
      t.z = s.z.value_or(0.0);
      out += t.to_json().dump() + "\n";
    }
  } else {
    throw ApiError(404, "unknown export '" + kind + "'");
  }
  return out;
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::size_t SessionService::event_count() const {
  std::lock_guard lock(mu_);
  return events_;
}

// --- HTTP ---------------------------------------------------------------------------

struct HttpServer::Impl {
  SessionService& svc;
  httplib::Server server;
  explicit Impl(SessionService& s) : svc(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void handle(httplib::Response& res, F&& fn) {
  try {
    send_json(res, 200, fn());
  } catch (const ApiError& e) {
    send_json(res, e.status(), {{"error", e.what()}});
  } catch (const ValidationError& e) {
    send_json(res, 400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

Json body_json(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error&) {
    throw ApiError(400, "malformed JSON body");
  }
}

}  // namespace

HttpServer::HttpServer(SessionService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->svc;
  srv.Post("/api/session", [&svc](const httplib::Request& req, httplib::Response& res) {
    handle(res, [&] { return svc.create_session(body_json(req)); });
  });
  srv.Get(R"(/api/session/([A-Za-z0-9-]+))",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] { return svc.view(req.matches[1]); });
          });
  srv.Post(R"(/api/session/([A-Za-z0-9-]+)/reveal)",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             handle(res, [&] { return svc.reveal(req.matches[1], body_json(req)); });
           });
  srv.Post(R"(/api/session/([A-Za-z0-9-]+)/gsp)",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             handle(res, [&] { return svc.gsp(req.matches[1], body_json(req)); });
           });
  srv.Post(R"(/api/session/([A-Za-z0-9-]+)/description)",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             handle(res, [&] { return svc.describe(req.matches[1], body_json(req)); });
           });
  srv.Get(R"(/api/export/([a-z-]+))", [&svc](const httplib::Request& req,
                                             httplib::Response& res) {
    try {
      res.set_content(svc.export_kind(req.matches[1]), "application/x-ndjson");
    } catch (const ApiError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    }
  });
  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) {
    srv.set_mount_point("/", static_dir.string());
  }
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int p = srv.bind_to_any_port(host);
    if (p < 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!srv.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace gridmind::service
