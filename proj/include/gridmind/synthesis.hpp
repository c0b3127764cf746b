#ifndef GRIDMIND_SYNTHESIS_HPP_
#define GRIDMIND_SYNTHESIS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridmind/board.hpp"
#include "gridmind/dsl.hpp"
#include "gridmind/library_learning.hpp"
#include "gridmind/nn.hpp"

namespace gridmind::synthesis {

using dsl::Library;
using dsl::Program;
using dsl::Score;

// Production indices: the five primitives, fork, then one per library
// function (f0 -> 6, f1 -> 7, ...).
enum Production : int {
  kMove = 0,
  kLeft = 1,
  kRight = 2,
  kPenUp = 3,
  kPenDown = 4,
  kFork = 5,
  kFirstCall = 6,
};

int production_count(const Library& library);
std::string production_name(int production);

// Normalized log-probabilities over productions.
class UnigramGrammar {
 public:
  UnigramGrammar() = default;
  static UnigramGrammar uniform(std::size_t productions);
  static UnigramGrammar from_log_weights(std::vector<double> log_weights);
  static UnigramGrammar from_probs(const std::vector<double>& probs);

  std::size_t size() const { return log_weights_.size(); }
  double log_prob(int production) const { return log_weights_.at(production); }
  double prob(int production) const;
  const std::vector<double>& log_weights() const { return log_weights_; }
  std::vector<double> probs() const;

 private:
  std::vector<double> log_weights_;
};

// Empirical production frequencies of a program (forks count their bodies).
std::vector<double> token_distribution(const Program& program,
                                       std::size_t productions);

struct SearchBudget {
  long max_nodes = 200000;
  int max_program_size = 20;
  double timeout_seconds = 120.0;
};

struct SolveResult {
  std::string task_id;
  std::optional<Program> best_program;
  Score best_score = Score::neg_inf();
  long nodes_expanded = 0;
};

// Best-first enumeration over token sequences ordered by prefix cost
// sum(-log p(token)). Every popped prefix is scored as a complete program
// (open forks closed). Prefixes whose score is -inf are not expanded, since
// marks never disappear. Search stops at the node budget, the size cap,
// the timeout, or once the cost level that produced a score-0 program is
// exhausted. `on_pop`, when set, sees every popped cost in order.
SolveResult enumerate(const Board& target, const UnigramGrammar& grammar,
                      const SearchBudget& budget, const Library& library,
                      std::string task_id = {},
                      const std::function<void(double)>& on_pop = {});

// Returns true if `a` should replace `b` as the best program: higher score,
// then smaller size, then lexicographically smaller printed form.
bool better_solution(const Score& sa, const Program& a, const Score& sb,
                     const Program& b);

// conv(1 -> 16, 3x3, same) -> relu -> fc 64 -> relu -> fc 64 -> relu -> linear
// head over productions. The second 64-unit layer is the board embedding.
class RecognitionNet {
 public:
  static constexpr std::size_t kChannels = 16;
  static constexpr std::size_t kHidden = 64;

  RecognitionNet(int n, int productions, std::uint64_t seed);
  static RecognitionNet zeros(int n, int productions);

  RecognitionNet(RecognitionNet&&) = default;
  RecognitionNet& operator=(RecognitionNet&&) = default;
  RecognitionNet(const RecognitionNet&) = delete;
  RecognitionNet& operator=(const RecognitionNet&) = delete;
  RecognitionNet clone() const;

  int n() const { return n_; }
  int productions() const { return productions_; }

  struct Outputs {
    nn::Var embedding;  // [B, 64]
    nn::Var logits;     // [B, productions]
  };
  Outputs forward(const std::vector<Board>& boards) const;

  std::vector<double> embed(const Board& board) const;
  std::vector<double> logits(const Board& board) const;
  UnigramGrammar predict(const Board& board) const;

  // Copy with a head sized for `productions`; existing rows are kept and new
  // rows start at zero.
  RecognitionNet with_productions(int productions) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  void save(const std::filesystem::path& path) const;
  static RecognitionNet load(const std::filesystem::path& path);

 private:
  RecognitionNet(int n, int productions);
  void build(Rng* rng);
  void check_board(const Board& b) const;

  int n_ = 4;
  int productions_ = kFirstCall;
  nn::ParamStore ps_;
  nn::Conv2d conv_;
  nn::Dense fc1_;
  nn::Dense fc2_;
  nn::Dense head_;
};

UnigramGrammar predict_grammar(const RecognitionNet& net, const Board& board);
std::vector<double> embed_board(const RecognitionNet& net, const Board& board);

struct TrainExample {
  Board board;
  Program program;
};

struct RecognitionTrainConfig {
  double dream_fraction = 0.5;
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Full-batch Adam on cross-entropy between the predicted grammar and each
// example's token distribution. Returns the per-epoch loss.
std::vector<double> train_recognition(RecognitionNet& net,
                                      const std::vector<TrainExample>& solved,
                                      const std::vector<TrainExample>& dreams,
                                      const RecognitionTrainConfig& cfg);

// Random programs sampled from the grammar, executed from a random start;
// the marked cells become the dream board.
std::vector<TrainExample> sample_dreams(const UnigramGrammar& grammar,
                                        const Library& library, int count,
                                        int max_size, int grid_n,
                                        std::uint64_t seed);

struct WakeSleepConfig {
  int iterations = 4;
  SearchBudget budget;
  double lambda = 1.5;
  bool library_learning = true;
  int max_new_functions = 8;
  int dreams = 200;
  int dream_max_size = 8;
  RecognitionTrainConfig recognition;
  std::uint64_t seed = 0;
};

struct IterationStats {
  int iteration = 0;
  int solved_exact = 0;  // score == best achievable cover (no missed cells)
  double mdl_before = 0.0;
  double mdl_after = 0.0;
  int library_size = 0;
  double recognition_loss = 0.0;
};

struct WakeSleepResult {
  Library library;
  std::vector<SolveResult> solutions;  // aligned with the task dataset
  RecognitionNet recognition;
  std::vector<IterationStats> history;
};

WakeSleepResult wake_sleep(const BoardDataset& tasks,
                           const WakeSleepConfig& cfg);

// Solutions JSONL: {task_id, program, score}.
void save_solutions(const std::filesystem::path& path,
                    const std::vector<SolveResult>& solutions);
std::vector<SolveResult> load_solutions(const std::filesystem::path& path,
                                        const Library& library);

}  // namespace gridmind::synthesis

#endif  // GRIDMIND_SYNTHESIS_HPP_
