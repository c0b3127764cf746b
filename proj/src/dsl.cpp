#include "gridmind/dsl.hpp"

#include <cctype>

namespace gridmind::dsl {

namespace {

constexpr int kDr[4] = {-1, 0, 1, 0};  // N E S W
constexpr int kDc[4] = {0, 1, 0, -1};

const char* op_token(Op op) {
  switch (op) {
    case Op::Move: return "move";
    case Op::Left: return "left";
    case Op::Right: return "right";
    case Op::PenUp: return "pen-up";
    case Op::PenDown: return "pen-down";
    case Op::Fork: return "fork";
    case Op::Call: return "call";
  }
  return "?";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (ch == '(' || ch == ')') {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return tokens;
}

class Parser {
 public:
  Parser(std::vector<std::string> tokens, const Library& library, int max_fn)
      : tokens_(std::move(tokens)), library_(library), max_fn_(max_fn) {}

  Program parse() {
    Program p = sequence(0);
    if (pos_ != tokens_.size()) {
      throw ValidationError("unbalanced parentheses: unexpected ')'");
    }
    return p;
  }

 private:
  Program sequence(int depth) {
    Program out;
    while (pos_ < tokens_.size()) {
      const std::string& tok = tokens_[pos_];
      if (tok == ")") {
        if (depth == 0) return out;
        return out;
      }
      ++pos_;
      if (tok == "(") {
        if (pos_ >= tokens_.size() || tokens_[pos_] != "fork") {
          throw ValidationError("expected 'fork' after '('");
        }
        ++pos_;
        Program body = sequence(depth + 1);
        if (pos_ >= tokens_.size() || tokens_[pos_] != ")") {
          throw ValidationError("unbalanced parentheses: missing ')'");
        }
        ++pos_;
        out.push_back(Instruction::fork(std::move(body)));
      } else {
        out.push_back(atom(tok));
      }
    }
    if (depth > 0) throw ValidationError("unbalanced parentheses: missing ')'");
    return out;
  }

  Instruction atom(const std::string& tok) {
    if (tok == "move") return Instruction::make(Op::Move);
    if (tok == "left") return Instruction::make(Op::Left);
    if (tok == "right") return Instruction::make(Op::Right);
    if (tok == "pen-up") return Instruction::make(Op::PenUp);
    if (tok == "pen-down") return Instruction::make(Op::PenDown);
    if (tok.size() > 1 && tok[0] == 'f' &&
        tok.find_first_not_of("0123456789", 1) == std::string::npos) {
      const int fn = std::stoi(tok.substr(1));
      if (fn >= max_fn_ || fn >= static_cast<int>(library_.size())) {
        throw ValidationError("undefined library function '" + tok + "'");
      }
      return Instruction::call(fn);
    }
    throw ValidationError("unknown token '" + tok + "'");
  }

  std::vector<std::string> tokens_;
  const Library& library_;
  int max_fn_;
  std::size_t pos_ = 0;
};

void check_calls(const Program& p, int limit) {
  for (const auto& in : p) {
    if (in.op == Op::Call && (in.fn < 0 || in.fn >= limit)) {
      throw ValidationError("library body calls undefined or later function " +
                            Library::name(in.fn));
    }
    if (in.op == Op::Fork) check_calls(in.body, limit);
  }
}

struct Machine {
  int n;
  const Library& library;
  PointerState st;
  std::uint64_t marked;
  int pen_motions = 0;
  int depth = 0;

  void mark() { marked |= std::uint64_t{1} << (st.pos.row * n + st.pos.col); }

  void run(const Program& p) {
    for (const auto& in : p) step(in);
  }

  void step(const Instruction& in) {
    switch (in.op) {
      case Op::Move: {
        const int o = static_cast<int>(st.orient);
        const int r = st.pos.row + kDr[o];
        const int c = st.pos.col + kDc[o];
        if (r >= 0 && c >= 0 && r < n && c < n) st.pos = {r, c};
        if (st.pen_down) {
          ++pen_motions;
          mark();
        }
        break;
      }
      case Op::Left:
        st.orient = static_cast<Orient>((static_cast<int>(st.orient) + 3) % 4);
        if (st.pen_down) ++pen_motions;
        break;
      case Op::Right:
        st.orient = static_cast<Orient>((static_cast<int>(st.orient) + 1) % 4);
        if (st.pen_down) ++pen_motions;
        break;
      case Op::PenUp:
        st.pen_down = false;
        break;
      case Op::PenDown:
        st.pen_down = true;
        mark();
        break;
      case Op::Fork: {
        const PointerState saved = st;
        run(in.body);
        st = saved;
        break;
      }
      case Op::Call: {
        if (in.fn < 0 || in.fn >= static_cast<int>(library.size())) {
          throw ValidationError("call to undefined library function " +
                                Library::name(in.fn));
        }
        // Bodies only call earlier functions, so depth is bounded by the
        // library size; anything deeper means the invariant was broken.
        if (++depth > static_cast<int>(library.size()) + 1) {
          throw std::logic_error("recursive library call detected");
        }
        run(library.body(in.fn));
        --depth;
        break;
      }
    }
  }
};

}  // namespace

int Library::add(Program body) {
  if (body.empty()) throw ValidationError("library bodies must be non-empty");
  check_calls(body, static_cast<int>(functions_.size()));
  functions_.push_back(std::move(body));
  return static_cast<int>(functions_.size()) - 1;
}

const Program& Library::body(int fn) const {
  if (fn < 0 || fn >= static_cast<int>(functions_.size())) {
    throw ValidationError("undefined library function " + name(fn));
  }
  return functions_[static_cast<std::size_t>(fn)];
}

Json Library::to_json() const {
  Json j = Json::object();
  for (std::size_t i = 0; i < functions_.size(); ++i) {
    j[name(static_cast<int>(i))] = dsl::to_string(functions_[i]);
  }
  return j;
}

Library Library::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("library must be a JSON object");
  Library lib;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string key = name(static_cast<int>(k));
    if (!j.contains(key)) {
      throw ValidationError("library ids must be f0..f" +
                            std::to_string(j.size() - 1) + "; missing " + key);
    }
    // Parsing with a truncated view enforces topological order.
    Parser parser(tokenize(j.at(key).get<std::string>()), lib,
                  static_cast<int>(k));
    lib.add(parser.parse());
  }
  return lib;
}

Library Library::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

void Library::save(const std::filesystem::path& path) const {
  write_json(path, to_json());
}

Program parse_program(std::string_view text, const Library& library) {
  Parser parser(tokenize(text), library, static_cast<int>(library.size()));
  return parser.parse();
}

std::string to_string(const Instruction& in) {
  if (in.op == Op::Call) return Library::name(in.fn);
  if (in.op == Op::Fork) {
    std::string s = "(fork";
    for (const auto& b : in.body) s += " " + to_string(b);
    return s + ")";
  }
  return op_token(in.op);
}

std::string to_string(const Program& program) {
  std::string s;
  for (const auto& in : program) {
    if (!s.empty()) s.push_back(' ');
    s += to_string(in);
  }
  return s;
}

ExecTrace execute_from(const Program& program, PointerState state,
                       std::uint64_t marked, int grid_n,
                       const Library& library) {
  if (!(state.pos.row >= 0 && state.pos.col >= 0 && state.pos.row < grid_n &&
        state.pos.col < grid_n)) {
    throw ValidationError("start location out of bounds");
  }
  Machine m{grid_n, library, state, marked};
  m.run(program);
  return {m.marked, m.pen_motions, m.st};
}

ExecTrace execute(const Program& program, Cell start, int grid_n,
                  const Library& library) {
  return execute_from(program, PointerState{start, Orient::E, false}, 0,
                      grid_n, library);
}

std::string Score::to_string() const {
  return is_finite() ? std::to_string(*value_) : std::string("-inf");
}

Json Score::to_json() const {
  return is_finite() ? Json(*value_) : Json("-inf");
}

Score score_trace(const ExecTrace& trace, std::uint64_t target) {
  if (trace.marked & ~target) return Score::neg_inf();
  const int missed = __builtin_popcountll(target & ~trace.marked);
  return Score::finite(-10 * missed - trace.pen_motions);
}

Score score(const Program& program, const Board& target,
            const Library& library, Cell* best_start) {
  const int n = target.n();
  const std::uint64_t t = target.mask();
  Score best = Score::neg_inf();
  Cell arg{0, 0};
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const Score s = score_trace(execute(program, {r, c}, n, library), t);
      if (s > best) {
        best = s;
        arg = {r, c};
      }
    }
  }
  if (best_start) *best_start = arg;
  return best;
}

Score score(const Program& program, const Board& target,
            const Library& library) {
  return score(program, target, library, nullptr);
}

int program_size(const Program& program) {
  int s = 0;
  for (const auto& in : program) {
    s += 1;
    if (in.op == Op::Fork) s += program_size(in.body);
  }
  return s;
}

Program inline_calls(const Program& program, const Library& library) {
  Program out;
  for (const auto& in : program) {
    if (in.op == Op::Call) {
      for (auto& x : inline_calls(library.body(in.fn), library)) {
        out.push_back(std::move(x));
      }
    } else if (in.op == Op::Fork) {
      out.push_back(Instruction::fork(inline_calls(in.body, library)));
    } else {
      out.push_back(in);
    }
  }
  return out;
}

}  // namespace gridmind::dsl
