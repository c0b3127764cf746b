#ifndef GRIDMIND_DSL_HPP_
#define GRIDMIND_DSL_HPP_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridmind/board.hpp"

// The pointer/pen drawing language. A program is a sequence of
// instructions; `fork` runs a sub-sequence and then restores the pointer
// (position, orientation, pen) while keeping whatever it marked.
namespace gridmind::dsl {

enum class Op : std::uint8_t { Move, Left, Right, PenUp, PenDown, Fork, Call };

struct Instruction;
using Program = std::vector<Instruction>;

struct Instruction {
  Op op = Op::Move;
  Program body;  // Fork only
  int fn = -1;   // Call only: library index

  static Instruction make(Op op) { return {op, {}, -1}; }
  static Instruction fork(Program body) { return {Op::Fork, std::move(body), -1}; }
  static Instruction call(int fn) { return {Op::Call, {}, fn}; }

  bool operator==(const Instruction&) const = default;
};

// Learned abstractions. f<k> may only call f<j> for j < k, which keeps the
// call graph acyclic.
class Library {
 public:
  Library() = default;

  // Appends a function and returns its index. Bodies must be non-empty and
  // reference only earlier functions.
  int add(Program body);
  const Program& body(int fn) const;
  std::size_t size() const { return functions_.size(); }
  bool empty() const { return functions_.empty(); }
  const std::vector<Program>& functions() const { return functions_; }

  static std::string name(int fn) { return "f" + std::to_string(fn); }

  // {"f0": "<program text>", ...}
  Json to_json() const;
  static Library from_json(const Json& j);
  static Library load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const Library&) const = default;

 private:
  std::vector<Program> functions_;
};

Program parse_program(std::string_view text, const Library& library);
std::string to_string(const Program& program);
std::string to_string(const Instruction& instr);

enum class Orient : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };

struct PointerState {
  Cell pos;
  Orient orient = Orient::E;
  bool pen_down = false;
  bool operator==(const PointerState&) const = default;
};

struct ExecTrace {
  std::uint64_t marked = 0;  // bit i = row-major cell i
  int pen_motions = 0;
  PointerState final_state;

  bool operator==(const ExecTrace&) const = default;
  bool is_marked(int n, Cell c) const {
    return (marked >> (c.row * n + c.col)) & 1U;
  }
};

// Runs `program` from `start` facing east with the pen up.
ExecTrace execute(const Program& program, Cell start, int grid_n,
                  const Library& library);

// Continues execution from an arbitrary pointer state and mark set.
ExecTrace execute_from(const Program& program, PointerState state,
                       std::uint64_t marked, int grid_n,
                       const Library& library);

// Program score: an integer <= 0, or negative infinity.
class Score {
 public:
  static Score neg_inf() { return Score(); }
  static Score finite(int v) { return Score(v); }

  bool is_finite() const { return value_.has_value(); }
  int value() const { return *value_; }
  std::string to_string() const;
  Json to_json() const;

  auto operator<=>(const Score& o) const {
    if (!is_finite() || !o.is_finite()) {
      return is_finite() <=> o.is_finite();
    }
    return *value_ <=> *o.value_;
  }
  bool operator==(const Score&) const = default;

 private:
  Score() = default;
  explicit Score(int v) : value_(v) {}
  std::optional<int> value_;
};

// Score of a trace against a target mask: -10 per missed target cell,
// -infinity if anything outside the target is marked, -1 per pen-down motion.
Score score_trace(const ExecTrace& trace, std::uint64_t target);

// Best score over every start location.
Score score(const Program& program, const Board& target,
            const Library& library);
// Same, also reporting the best start (first in row-major order on ties).
Score score(const Program& program, const Board& target,
            const Library& library, Cell* best_start);

// Token count: Fork counts 1 + its body, Call counts 1.
int program_size(const Program& program);

// Replaces every Call by the library body, recursively.
Program inline_calls(const Program& program, const Library& library);

}  // namespace gridmind::dsl

#endif  // GRIDMIND_DSL_HPP_
