#include "gridmind/synthesis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>

namespace gridmind::synthesis {

namespace {

constexpr int kClose = -1;

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

dsl::Instruction production_instruction(int p) {
  switch (p) {
    case kMove: return dsl::Instruction::make(dsl::Op::Move);
    case kLeft: return dsl::Instruction::make(dsl::Op::Left);
    case kRight: return dsl::Instruction::make(dsl::Op::Right);
    case kPenUp: return dsl::Instruction::make(dsl::Op::PenUp);
    case kPenDown: return dsl::Instruction::make(dsl::Op::PenDown);
    default: return dsl::Instruction::call(p - kFirstCall);
  }
}

int instruction_production(const dsl::Instruction& in) {
  switch (in.op) {
    case dsl::Op::Move: return kMove;
    case dsl::Op::Left: return kLeft;
    case dsl::Op::Right: return kRight;
    case dsl::Op::PenUp: return kPenUp;
    case dsl::Op::PenDown: return kPenDown;
    case dsl::Op::Fork: return kFork;
    case dsl::Op::Call: return kFirstCall + in.fn;
  }
  return kMove;
}

void count_tokens(const Program& p, std::vector<double>& counts) {
  for (const auto& in : p) {
    const int prod = instruction_production(in);
    if (prod >= static_cast<int>(counts.size())) {
      throw ValidationError("program uses production outside grammar");
    }
    counts[static_cast<std::size_t>(prod)] += 1.0;
    if (in.op == dsl::Op::Fork) count_tokens(in.body, counts);
  }
}

struct SearchNode {
  int parent;
  int token;
  int size;
  int depth;  // open forks
};

struct FrontierEntry {
  double cost;
  long seq;
  int node;
  bool operator>(const FrontierEntry& o) const {
    return cost != o.cost ? cost > o.cost : seq > o.seq;
  }
};

Program build_program(const std::vector<SearchNode>& arena, int idx) {
  std::vector<int> tokens;
  for (int i = idx; i > 0; i = arena[static_cast<std::size_t>(i)].parent) {
    tokens.push_back(arena[static_cast<std::size_t>(i)].token);
  }
  std::vector<Program> stack(1);
  for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
    if (*it == kFork) {
      stack.emplace_back();
    } else if (*it == kClose) {
      Program body = std::move(stack.back());
      stack.pop_back();
      stack.back().push_back(dsl::Instruction::fork(std::move(body)));
    } else {
      stack.back().push_back(production_instruction(*it));
    }
  }
  while (stack.size() > 1) {
    Program body = std::move(stack.back());
    stack.pop_back();
    stack.back().push_back(dsl::Instruction::fork(std::move(body)));
  }
  return std::move(stack.front());
}

}  // namespace

int production_count(const Library& library) {
  return kFirstCall + static_cast<int>(library.size());
}

std::string production_name(int p) {
  switch (p) {
    case kMove: return "move";
    case kLeft: return "left";
    case kRight: return "right";
    case kPenUp: return "pen-up";
    case kPenDown: return "pen-down";
    case kFork: return "fork";
    default: return Library::name(p - kFirstCall);
  }
}

UnigramGrammar UnigramGrammar::uniform(std::size_t productions) {
  return from_log_weights(std::vector<double>(productions, 0.0));
}

UnigramGrammar UnigramGrammar::from_log_weights(std::vector<double> lw) {
  if (lw.empty()) throw std::invalid_argument("grammar needs productions");
  const double z = log_sum_exp(lw);
  for (double& x : lw) x -= z;
  UnigramGrammar g;
  g.log_weights_ = std::move(lw);
  return g;
}

UnigramGrammar UnigramGrammar::from_probs(const std::vector<double>& probs) {
  std::vector<double> lw;
  lw.reserve(probs.size());
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("negative probability");
    lw.push_back(p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity());
  }
  return from_log_weights(std::move(lw));
}

double UnigramGrammar::prob(int production) const {
  return std::exp(log_prob(production));
}

std::vector<double> UnigramGrammar::probs() const {
  std::vector<double> p;
  p.reserve(log_weights_.size());
  for (double x : log_weights_) p.push_back(std::exp(x));
  return p;
}

std::vector<double> token_distribution(const Program& program,
                                       std::size_t productions) {
  std::vector<double> counts(productions, 0.0);
  count_tokens(program, counts);
  double total = 0.0;
  for (double c : counts) total += c;
  if (total > 0.0) {
    for (double& c : counts) c /= total;
  }
  return counts;
}

bool better_solution(const Score& sa, const Program& a, const Score& sb,
                     const Program& b) {
  if (sa != sb) return sa > sb;
  const int za = dsl::program_size(a), zb = dsl::program_size(b);
  if (za != zb) return za < zb;
  return dsl::to_string(a) < dsl::to_string(b);
}

SolveResult enumerate(const Board& target, const UnigramGrammar& grammar,
                      const SearchBudget& budget, const Library& library,
                      std::string task_id,
                      const std::function<void(double)>& on_pop) {
  const int productions = production_count(library);
  if (static_cast<int>(grammar.size()) != productions) {
    throw std::invalid_argument("grammar size " + std::to_string(grammar.size()) +
                                " does not cover " + std::to_string(productions) +
                                " productions");
  }
  if (budget.max_nodes <= 0 || budget.max_program_size <= 0 ||
      budget.timeout_seconds <= 0) {
    throw std::invalid_argument("search budget must be positive");
  }
  const auto t0 = std::chrono::steady_clock::now();

  SolveResult result;
  result.task_id = std::move(task_id);

  std::vector<SearchNode> arena{{-1, kClose, 0, 0}};
  std::priority_queue<FrontierEntry, std::vector<FrontierEntry>,
                      std::greater<FrontierEntry>>
      frontier;
  long seq = 0;
  frontier.push({0.0, seq++, 0});
  std::optional<double> optimum_cost;

  while (!frontier.empty() && result.nodes_expanded < budget.max_nodes) {
    const FrontierEntry top = frontier.top();
    if (optimum_cost && top.cost > *optimum_cost + 1e-12) break;
    frontier.pop();
    ++result.nodes_expanded;
    if (on_pop) on_pop(top.cost);
    if ((result.nodes_expanded & 1023) == 0) {
      const std::chrono::duration<double> el =
          std::chrono::steady_clock::now() - t0;
      if (el.count() > budget.timeout_seconds) break;
    }

    const SearchNode node = arena[static_cast<std::size_t>(top.node)];
    Program program = build_program(arena, top.node);
    const Score s = dsl::score(program, target, library);
    if (s.is_finite() &&
        (!result.best_program ||
         better_solution(s, program, result.best_score, *result.best_program))) {
      result.best_score = s;
      result.best_program = std::move(program);
      if (s.value() == 0 && !optimum_cost) optimum_cost = top.cost;
    }
    if (!s.is_finite()) continue;  // no extension can recover

    for (int p = 0; p < productions; ++p) {
      const double lp = grammar.log_prob(p);
      if (!std::isfinite(lp)) continue;
      const int need = p == kFork ? 2 : 1;  // a fork needs a body token
      if (node.size + need > budget.max_program_size) continue;
      arena.push_back({top.node, p, node.size + 1,
                       node.depth + (p == kFork ? 1 : 0)});
      frontier.push({top.cost - lp, seq++, static_cast<int>(arena.size()) - 1});
    }
    if (node.depth > 0 && node.token != kFork) {
      arena.push_back({top.node, kClose, node.size, node.depth - 1});
      frontier.push({top.cost, seq++, static_cast<int>(arena.size()) - 1});
    }
  }
  return result;
}

// --- recognition network -------------------------------------------------------

RecognitionNet::RecognitionNet(int n, int productions)
    : n_(n), productions_(productions) {
  if (n < 2 || n > Board::kMaxSide) throw ValidationError("bad board side");
  if (productions < kFirstCall) throw ValidationError("too few productions");
}

RecognitionNet::RecognitionNet(int n, int productions, std::uint64_t seed)
    : RecognitionNet(n, productions) {
  Rng rng(seed);
  build(&rng);
}

RecognitionNet RecognitionNet::zeros(int n, int productions) {
  RecognitionNet net(n, productions);
  net.build(nullptr);
  return net;
}

void RecognitionNet::build(Rng* rng) {
  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  const auto area = static_cast<std::size_t>(n_ * n_);
  conv_ = nn::Conv2d::create(ps_, "conv", 1, kChannels, 3, r);
  fc1_ = nn::Dense::create(ps_, "fc1", kChannels * area, kHidden, r);
  fc2_ = nn::Dense::create(ps_, "fc2", kHidden, kHidden, r);
  head_ = nn::Dense::create(ps_, "head", kHidden,
                            static_cast<std::size_t>(productions_), r);
  if (!rng) {
    for (auto& v : ps_.vars()) v.mutable_value().fill(0.0);
  }
}

RecognitionNet RecognitionNet::clone() const {
  RecognitionNet out = zeros(n_, productions_);
  out.ps_.set_flat_values(ps_.flat_values());
  return out;
}

void RecognitionNet::check_board(const Board& b) const {
  if (b.n() != n_) {
    throw ValidationError("board size " + std::to_string(b.n()) +
                          " does not match recognition input " +
                          std::to_string(n_));
  }
}

RecognitionNet::Outputs RecognitionNet::forward(
    const std::vector<Board>& boards) const {
  const std::size_t B = boards.size();
  const auto n = static_cast<std::size_t>(n_);
  nn::Tensor x({B, 1, n, n});
  for (std::size_t b = 0; b < B; ++b) {
    check_board(boards[b]);
    for (std::size_t i = 0; i < n * n; ++i) {
      x[b * n * n + i] = boards[b].red(static_cast<int>(i)) ? 1.0 : 0.0;
    }
  }
  nn::Var h = nn::relu(conv_(nn::constant(std::move(x))));
  h = nn::reshape(h, {B, kChannels * n * n});
  h = nn::relu(fc1_(h));
  nn::Var emb = nn::relu(fc2_(h));
  nn::Var logits = head_(emb);
  return {emb, logits};
}

std::vector<double> RecognitionNet::embed(const Board& board) const {
  const auto out = forward({board});
  const auto v = out.embedding.value().values();
  return {v.begin(), v.end()};
}

std::vector<double> RecognitionNet::logits(const Board& board) const {
  const auto out = forward({board});
  const auto v = out.logits.value().values();
  return {v.begin(), v.end()};
}

UnigramGrammar RecognitionNet::predict(const Board& board) const {
  return UnigramGrammar::from_log_weights(logits(board));
}

RecognitionNet RecognitionNet::with_productions(int productions) const {
  if (productions < productions_) {
    throw std::invalid_argument("recognition head cannot shrink");
  }
  RecognitionNet out = zeros(n_, productions);
  for (const auto& name : ps_.names()) {
    const nn::Tensor& src = ps_.get(name).value();
    nn::Tensor& dst = out.ps_.get(name).mutable_value();
    // Head rows are the leading block in both layouts ([out, in] and [out]).
    std::copy_n(src.data(), src.size(), dst.data());
  }
  return out;
}

void RecognitionNet::save(const std::filesystem::path& path) const {
  ps_.save(path, {{"kind", "recognition"},
                  {"n", n_},
                  {"productions", productions_},
                  {"channels", kChannels},
                  {"hidden", kHidden},
                  {"nonlinearity", "relu"},
                  {"input", "single binary channel"}});
}

RecognitionNet RecognitionNet::load(const std::filesystem::path& path) {
  const Json meta = nn::ParamStore::read_manifest(path).at("meta");
  if (meta.value("kind", "") != "recognition") {
    throw ValidationError(path.string() + " is not a recognition checkpoint");
  }
  RecognitionNet net = zeros(meta.at("n").get<int>(),
                             meta.at("productions").get<int>());
  net.ps_.load(path);
  return net;
}

UnigramGrammar predict_grammar(const RecognitionNet& net, const Board& board) {
  return net.predict(board);
}

std::vector<double> embed_board(const RecognitionNet& net, const Board& board) {
  return net.embed(board);
}

std::vector<double> train_recognition(RecognitionNet& net,
                                      const std::vector<TrainExample>& solved,
                                      const std::vector<TrainExample>& dreams,
                                      const RecognitionTrainConfig& cfg) {
  if (solved.empty() && dreams.empty()) {
    throw std::invalid_argument("train_recognition: no training examples");
  }
  if (cfg.dream_fraction < 0.0 || cfg.dream_fraction >= 1.0) {
    throw std::invalid_argument("dream_fraction must be in [0, 1)");
  }
  const auto P = static_cast<std::size_t>(net.productions());
  Rng rng(cfg.seed);

  std::size_t n_dreams = dreams.size();
  if (!solved.empty() && !dreams.empty()) {
    n_dreams = static_cast<std::size_t>(std::llround(
        static_cast<double>(solved.size()) * cfg.dream_fraction /
        (1.0 - cfg.dream_fraction)));
  }
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Board> boards;
    std::vector<double> targets;
    auto push = [&](const TrainExample& ex) {
      boards.push_back(ex.board);
      const auto t = token_distribution(ex.program, P);
      targets.insert(targets.end(), t.begin(), t.end());
    };
    for (const auto& ex : solved) push(ex);
    if (!dreams.empty()) {
      if (solved.empty()) {
        for (const auto& ex : dreams) push(ex);
      } else {
        for (std::size_t k = 0; k < n_dreams; ++k) {
          push(dreams[uniform_index(rng, dreams.size())]);
        }
      }
    }
    const std::size_t B = boards.size();
    net.params().zero_grad();
    const auto out = net.forward(boards);
    nn::Var loss = nn::cross_entropy_loss(
        out.logits, nn::constant(nn::Tensor({B, P}, std::move(targets))));
    nn::backward(loss);
    net.params().adam_step(cfg.lr);
    losses.push_back(loss.value().item());
  }
  return losses;
}

namespace {

Program sample_program(const std::discrete_distribution<int>& dist_in,
                       int budget, Rng& rng) {
  auto dist = dist_in;
  std::uniform_int_distribution<int> len(1, budget);
  const int target = len(rng);
  Program out;
  int size = 0;
  int guard = 0;
  while (size < target && guard++ < 1000) {
    const int p = dist(rng);
    if (p == kFork) {
      if (target - size < 2) continue;
      Program body = sample_program(dist_in, target - size - 1, rng);
      size += 1 + dsl::program_size(body);
      out.push_back(dsl::Instruction::fork(std::move(body)));
    } else {
      out.push_back(production_instruction(p));
      size += 1;
    }
  }
  return out;
}

}  // namespace

std::vector<TrainExample> sample_dreams(const UnigramGrammar& grammar,
                                        const Library& library, int count,
                                        int max_size, int grid_n,
                                        std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("dream count must be positive");
  if (static_cast<int>(grammar.size()) != production_count(library)) {
    throw std::invalid_argument("grammar does not match library");
  }
  const auto probs = grammar.probs();
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  Rng rng(seed);
  std::vector<TrainExample> out;
  const long cap = static_cast<long>(count) * 100;
  for (long attempt = 0; attempt < cap && static_cast<int>(out.size()) < count;
       ++attempt) {
    Program p = sample_program(dist, max_size, rng);
    const Cell start{static_cast<int>(uniform_index(rng, grid_n)),
                     static_cast<int>(uniform_index(rng, grid_n))};
    const auto trace = dsl::execute(p, start, grid_n, library);
    if (trace.marked == 0) continue;
    out.push_back({Board::from_mask(grid_n, trace.marked), std::move(p)});
  }
  return out;
}

// --- wake / sleep --------------------------------------------------------------

namespace {

bool covers_exactly(const SolveResult& r, const Board& target,
                    const Library& lib) {
  if (!r.best_program) return false;
  Cell start;
  const Score s = dsl::score(*r.best_program, target, lib, &start);
  if (!s.is_finite()) return false;
  return dsl::execute(*r.best_program, start, target.n(), lib).marked ==
         target.mask();
}

}  // namespace

WakeSleepResult wake_sleep(const BoardDataset& tasks,
                           const WakeSleepConfig& cfg) {
  if (tasks.empty()) throw ValidationError("wake_sleep: no tasks");
  const int n = tasks.at(0).board.n();
  for (const auto& e : tasks.entries()) {
    if (e.board.n() != n) throw ValidationError("tasks must share a board size");
  }
  WakeSleepResult res{Library{}, std::vector<SolveResult>(tasks.size()),
                      RecognitionNet(n, kFirstCall, derive_seed(cfg.seed, 1)),
                      {}};
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    res.solutions[i].task_id = tasks.at(i).id;
  }

  for (int it = 1; it <= cfg.iterations; ++it) {
    IterationStats st;
    st.iteration = it;
    // Wake.
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const Board& board = tasks.at(i).board;
      const UnigramGrammar g =
          it == 1 ? UnigramGrammar::uniform(
                        static_cast<std::size_t>(production_count(res.library)))
                  : res.recognition.predict(board);
      SolveResult r = enumerate(board, g, cfg.budget, res.library, tasks.at(i).id);
      SolveResult& cur = res.solutions[i];
      if (r.best_program &&
          (!cur.best_program || better_solution(r.best_score, *r.best_program,
                                                cur.best_score, *cur.best_program))) {
        cur.best_program = std::move(r.best_program);
        cur.best_score = r.best_score;
      }
      cur.nodes_expanded = r.nodes_expanded;
    }

    // Sleep: abstraction.
    std::vector<std::size_t> index;
    std::vector<Program> corpus;
    for (std::size_t i = 0; i < res.solutions.size(); ++i) {
      const auto& s = res.solutions[i];
      if (s.best_program && !s.best_program->empty()) {
        index.push_back(i);
        corpus.push_back(*s.best_program);
      }
    }
    st.mdl_before = abstraction::mdl(corpus, res.library, cfg.lambda);
    st.mdl_after = st.mdl_before;
    if (cfg.library_learning && !corpus.empty()) {
      auto comp = abstraction::compress(
          corpus, {cfg.lambda, cfg.max_new_functions}, res.library);
      res.library = std::move(comp.library);
      for (std::size_t k = 0; k < index.size(); ++k) {
        res.solutions[index[k]].best_program = std::move(comp.rewritten[k]);
      }
      corpus.clear();
      for (std::size_t i : index) corpus.push_back(*res.solutions[i].best_program);
      st.mdl_after = comp.mdl_after;
    }
    const int prods = production_count(res.library);
    if (prods != res.recognition.productions()) {
      res.recognition = res.recognition.with_productions(prods);
    }

    // Sleep: recognition, half dreams.
    std::vector<TrainExample> solved;
    std::vector<double> corpus_counts(static_cast<std::size_t>(prods), 1.0);
    for (std::size_t i : index) {
      solved.push_back({tasks.at(i).board, *res.solutions[i].best_program});
      const auto t = token_distribution(*res.solutions[i].best_program,
                                        static_cast<std::size_t>(prods));
      for (std::size_t k = 0; k < t.size(); ++k) corpus_counts[k] += t[k];
    }
    const auto dreams = sample_dreams(UnigramGrammar::from_probs(corpus_counts),
                                      res.library, cfg.dreams,
                                      cfg.dream_max_size, n,
                                      derive_seed(cfg.seed, 100 + it));
    RecognitionTrainConfig rc = cfg.recognition;
    rc.seed = derive_seed(cfg.seed, 200 + it);
    const auto losses = train_recognition(res.recognition, solved, dreams, rc);
    st.recognition_loss = losses.empty() ? 0.0 : losses.back();
    st.library_size = static_cast<int>(res.library.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (covers_exactly(res.solutions[i], tasks.at(i).board, res.library)) {
        ++st.solved_exact;
      }
    }
    res.history.push_back(st);
  }
  return res;
}

void save_solutions(const std::filesystem::path& path,
                    const std::vector<SolveResult>& solutions) {
  std::vector<Json> lines;
  for (const auto& s : solutions) {
    lines.push_back({{"task_id", s.task_id},
                     {"program", s.best_program ? Json(dsl::to_string(*s.best_program))
                                                : Json(nullptr)},
                     {"score", s.best_score.to_json()}});
  }
  write_jsonl(path, lines);
}

std::vector<SolveResult> load_solutions(const std::filesystem::path& path,
                                        const Library& library) {
  std::vector<SolveResult> out;
  read_jsonl(path, [&](const Json& j, std::size_t) {
    SolveResult r;
    r.task_id = j.at("task_id").get<std::string>();
    if (!j.at("program").is_null()) {
      r.best_program = dsl::parse_program(j.at("program").get<std::string>(), library);
    }
    const Json& s = j.at("score");
    r.best_score = s.is_number() ? Score::finite(s.get<int>()) : Score::neg_inf();
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace gridmind::synthesis
