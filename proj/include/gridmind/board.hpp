#ifndef GRIDMIND_BOARD_HPP_
#define GRIDMIND_BOARD_HPP_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gridmind/common.hpp"

namespace gridmind {

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

// An n x n red/white grid. Row-major, origin at the top-left; 1 = red.
class Board {
 public:
  static constexpr int kMaxSide = 8;

  Board() : Board(4) {}
  explicit Board(int n);
  Board(int n, std::vector<std::uint8_t> cells);

  // Rows separated by '/' or newlines, each a run of n '0'/'1' characters.
  static Board parse(std::string_view text);
  // Bit i of `mask` is cell i in row-major order.
  static Board from_mask(int n, std::uint64_t mask);

  int n() const { return n_; }
  int area() const { return n_ * n_; }
  bool red(int row, int col) const { return cells_[index(row, col)] != 0; }
  bool red(int idx) const { return cells_[idx] != 0; }
  void set(int row, int col, bool red) { cells_[index(row, col)] = red ? 1 : 0; }
  void set(int idx, bool red) { cells_[idx] = red ? 1 : 0; }
  int index(int row, int col) const { return row * n_ + col; }
  Cell cell(int idx) const { return {idx / n_, idx % n_}; }
  bool in_bounds(int row, int col) const {
    return row >= 0 && col >= 0 && row < n_ && col < n_;
  }

  int red_count() const;
  std::uint64_t mask() const;
  const std::vector<std::uint8_t>& cells() const { return cells_; }

  // Rows joined by '/'.
  std::string to_string() const;
  Json to_grid_json() const;
  static Board from_grid_json(const Json& grid);

  auto operator<=>(const Board&) const = default;

 private:
  int n_;
  std::vector<std::uint8_t> cells_;
};

struct DatasetEntry {
  std::string id;
  Board board;
  double weight = 1.0;
};

// Weighted collection of boards (weights are e.g. occurrence counts).
class BoardDataset {
 public:
  BoardDataset() = default;

  void add(DatasetEntry entry);
  // Adds `weight` to the entry holding `board`, creating it (with id
  // `prefix` + hex mask) when absent.
  void accumulate(const Board& board, double weight, std::string_view prefix);

  const std::vector<DatasetEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const DatasetEntry& at(std::size_t i) const { return entries_.at(i); }
  const DatasetEntry* find(std::string_view id) const;
  double total_weight() const;

  // Index drawn with probability weight_i / sum(weights).
  std::size_t sample_index(Rng& rng) const;

  // Entries with at least one red tile.
  BoardDataset playable() const;
  std::size_t count_all_white() const;

  static BoardDataset load_jsonl(const std::filesystem::path& path);
  void save_jsonl(const std::filesystem::path& path) const;
  std::vector<Json> to_jsonl() const;
  static BoardDataset from_jsonl(const std::vector<Json>& lines);

 private:
  std::vector<DatasetEntry> entries_;
};

Board sample_board(const BoardDataset& dataset, std::uint64_t seed);

// Deterministic id for a board: prefix + zero-padded hex mask.
std::string board_id(std::string_view prefix, const Board& board);

}  // namespace gridmind

#endif  // GRIDMIND_BOARD_HPP_
