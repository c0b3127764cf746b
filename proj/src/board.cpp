#include "gridmind/board.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

namespace gridmind {

Board::Board(int n) : n_(n) {
  if (n < 2 || n > kMaxSide) {
    throw ValidationError("board side must be in [2, 8], got " +
                          std::to_string(n));
  }
  cells_.assign(static_cast<std::size_t>(n * n), 0);
}

Board::Board(int n, std::vector<std::uint8_t> cells) : Board(n) {
  if (cells.size() != cells_.size()) {
    throw ValidationError("board cell count does not match side length");
  }
  for (auto c : cells) {
    if (c > 1) throw ValidationError("board cells must be 0 or 1");
  }
  cells_ = std::move(cells);
}

Board Board::parse(std::string_view text) {
  std::vector<std::string> rows;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    rows.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    if (ch == '/' || ch == '\n') {
      flush();
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  // A single trailing newline terminates the last row rather than opening one.
  if (rows.size() > 1 && rows.back().empty() && !text.empty() &&
      text.back() == '\n') {
    rows.pop_back();
  }
  const int n = static_cast<int>(rows.size());
  if (n < 2) throw ValidationError("board needs at least 2 rows");
  if (n > kMaxSide) throw ValidationError("board larger than 8x8");
  std::vector<std::uint8_t> cells;
  cells.reserve(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    if (static_cast<int>(rows[r].size()) != n) {
      throw ValidationError("ragged board: row " + std::to_string(r + 1) +
                            " has " + std::to_string(rows[r].size()) +
                            " cells, expected " + std::to_string(n));
    }
    for (char ch : rows[r]) {
      if (ch != '0' && ch != '1') {
        throw ValidationError(std::string("invalid board character '") + ch +
                              "'");
      }
      cells.push_back(ch == '1' ? 1 : 0);
    }
  }
  return Board(n, std::move(cells));
}

Board Board::from_mask(int n, std::uint64_t mask) {
  Board b(n);
  for (int i = 0; i < n * n; ++i) b.cells_[i] = (mask >> i) & 1U;
  return b;
}

int Board::red_count() const {
  return std::accumulate(cells_.begin(), cells_.end(), 0);
}

std::uint64_t Board::mask() const {
  std::uint64_t m = 0;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (cells_[i]) m |= std::uint64_t{1} << i;
  }
  return m;
}

std::string Board::to_string() const {
  std::string s;
  s.reserve(static_cast<std::size_t>(n_ * (n_ + 1)));
  for (int r = 0; r < n_; ++r) {
    if (r > 0) s.push_back('/');
    for (int c = 0; c < n_; ++c) s.push_back(red(r, c) ? '1' : '0');
  }
  return s;
}

Json Board::to_grid_json() const {
  Json grid = Json::array();
  for (int r = 0; r < n_; ++r) {
    Json row = Json::array();
    for (int c = 0; c < n_; ++c) row.push_back(red(r, c) ? 1 : 0);
    grid.push_back(std::move(row));
  }
  return grid;
}

Board Board::from_grid_json(const Json& grid) {
  if (!grid.is_array()) throw ValidationError("grid must be an array of rows");
  const int n = static_cast<int>(grid.size());
  if (n < 2 || n > kMaxSide) throw ValidationError("grid side out of range");
  std::vector<std::uint8_t> cells;
  for (const auto& row : grid) {
    if (!row.is_array() || static_cast<int>(row.size()) != n) {
      throw ValidationError("ragged grid");
    }
    for (const auto& v : row) {
      if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
        throw ValidationError("grid cells must be 0 or 1");
      }
      cells.push_back(static_cast<std::uint8_t>(v.get<int>()));
    }
  }
  return Board(n, std::move(cells));
}

void BoardDataset::add(DatasetEntry entry) {
  if (find(entry.id) != nullptr) {
    throw ValidationError("duplicate board id '" + entry.id + "'");
  }
  if (!(entry.weight >= 0.0)) {
    throw ValidationError("negative weight for board '" + entry.id + "'");
  }
  entries_.push_back(std::move(entry));
}

void BoardDataset::accumulate(const Board& board, double weight,
                              std::string_view prefix) {
  for (auto& e : entries_) {
    if (e.board == board) {
      e.weight += weight;
      return;
    }
  }
  add({board_id(prefix, board), board, weight});
}

const DatasetEntry* BoardDataset::find(std::string_view id) const {
  for (const auto& e : entries_) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

double BoardDataset::total_weight() const {
  double w = 0.0;
  for (const auto& e : entries_) w += e.weight;
  return w;
}

std::size_t BoardDataset::sample_index(Rng& rng) const {
  if (entries_.empty()) throw ValidationError("cannot sample: empty dataset");
  const double total = total_weight();
  if (!(total > 0.0)) throw ValidationError("cannot sample: all weights zero");
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (u < entries_[i].weight) return i;
    u -= entries_[i].weight;
  }
  // Rounding fell off the end: return the last entry with positive weight.
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (entries_[i].weight > 0.0) return i;
  }
  return entries_.size() - 1;
}

BoardDataset BoardDataset::playable() const {
  BoardDataset out;
  for (const auto& e : entries_) {
    if (e.board.red_count() > 0) out.entries_.push_back(e);
  }
  return out;
}

std::size_t BoardDataset::count_all_white() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(),
                    [](const auto& e) { return e.board.red_count() == 0; }));
}

std::vector<Json> BoardDataset::to_jsonl() const {
  std::vector<Json> lines;
  lines.reserve(entries_.size());
  for (const auto& e : entries_) {
    lines.push_back(
        {{"id", e.id}, {"grid", e.board.to_grid_json()}, {"weight", e.weight}});
  }
  return lines;
}

BoardDataset BoardDataset::from_jsonl(const std::vector<Json>& lines) {
  BoardDataset ds;
  for (const auto& j : lines) {
    if (!j.is_object() || !j.contains("id") || !j.contains("grid")) {
      throw ValidationError("dataset entry needs 'id' and 'grid'");
    }
    double w = j.value("weight", 1.0);
    ds.add({j.at("id").get<std::string>(), Board::from_grid_json(j.at("grid")),
            w});
  }
  return ds;
}

BoardDataset BoardDataset::load_jsonl(const std::filesystem::path& path) {
  BoardDataset ds;
  read_jsonl(path, [&](const Json& j, std::size_t) {
    auto one = from_jsonl({j});
    ds.add(one.entries_.front());
  });
  return ds;
}

void BoardDataset::save_jsonl(const std::filesystem::path& path) const {
  write_jsonl(path, to_jsonl());
}

Board sample_board(const BoardDataset& dataset, std::uint64_t seed) {
  Rng rng(seed);
  return dataset.at(dataset.sample_index(rng)).board;
}

std::string board_id(std::string_view prefix, const Board& board) {
  char buf[24];
  const int digits = (board.area() + 3) / 4;
  std::snprintf(buf, sizeof buf, "%0*llx", digits,
                static_cast<unsigned long long>(board.mask()));
  return std::string(prefix) + buf;
}

}  // namespace gridmind
