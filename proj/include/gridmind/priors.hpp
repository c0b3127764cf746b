#ifndef GRIDMIND_PRIORS_HPP_
#define GRIDMIND_PRIORS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gridmind/board.hpp"
#include "gridmind/nn.hpp"

namespace gridmind::priors {

enum class RuleFamily { Row, Column, RectOutline, RectFill, Diagonal, MirrorPair };

const std::vector<RuleFamily>& all_rule_families();
std::string to_string(RuleFamily f);
RuleFamily parse_rule_family(const std::string& name);

// Every distinct board the family can produce on an n x n grid, in a fixed
// order. Outlines need at least two interior cells so that no outline is a
// filled rectangle with a single cell removed.
std::vector<Board> family_boards(RuleFamily f, int n);

// First family (in declaration order) that produces `board`.
std::optional<RuleFamily> rule_witness(const Board& board);

// Picks a family by mixture weight, then a board uniformly within it.
struct RuleGenerator {
  int n = 4;
  std::vector<std::pair<RuleFamily, double>> mixture;

  // All families with equal weight.
  static RuleGenerator standard(int n = 4);
  Board generate(Rng& rng) const;
};

// `count` draws; duplicates are merged and weighted by occurrence count.
BoardDataset generate_prior_corpus(const RuleGenerator& gen, int count,
                                   std::uint64_t seed);

// P(masked tile is red | board with tile `masked` hidden). Implementations
// must ignore the board's value at `masked`.
using Conditional = std::function<double(const Board& board, int masked)>;

// 2n^2 inputs (values with the masked cell zeroed, then a one-hot mask)
// -> 3 hidden layers of 16 -> sigmoid.
class ConditionalModel {
 public:
  static constexpr std::size_t kHidden = 16;

  ConditionalModel(int n, std::uint64_t seed,
                   nn::Activation act = nn::Activation::Relu);
  static ConditionalModel zeros(int n, nn::Activation act = nn::Activation::Relu);

  ConditionalModel(ConditionalModel&&) = default;
  ConditionalModel& operator=(ConditionalModel&&) = default;
  ConditionalModel(const ConditionalModel&) = delete;
  ConditionalModel& operator=(const ConditionalModel&) = delete;

  int n() const { return n_; }
  nn::Activation activation() const { return act_; }

  // Logits [B, 1].
  nn::Var forward(const std::vector<Board>& boards,
                  const std::vector<int>& masked) const;
  // Graph-free evaluation of the same function.
  double prob_red(const Board& board, int masked) const;
  Conditional as_conditional() const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  void save(const std::filesystem::path& path) const;
  static ConditionalModel load(const std::filesystem::path& path);

 private:
  ConditionalModel(int n, nn::Activation act, Rng* rng);

  int n_;
  nn::Activation act_;
  nn::ParamStore ps_;
  std::vector<nn::Dense> layers_;
};

struct ConditionalTrainConfig {
  int epochs = 400;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Minimizes the expected binary cross-entropy over (board ~ weights, masked
// tile ~ uniform). Each epoch visits every distinct (board, tile) pair once
// in minibatches, weighting pairs by their sampling probability. Returns the
// full-data loss after each epoch.
std::vector<double> train_conditional(ConditionalModel& model,
                                      const BoardDataset& dataset,
                                      const ConditionalTrainConfig& cfg);

// Fraction of `trials` draws (board by weight, tile uniform) for which
// thresholding P(red) at 0.5 recovers the true color.
double masked_accuracy(const Conditional& model, const BoardDataset& dataset,
                       int trials, std::uint64_t seed);

struct GibbsConfig {
  int n = 4;
  int chains = 200;
  int sweeps = 500;  // a sweep is n^2 single-tile updates
  int burn_in = 100;
  int thin = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Random-scan Gibbs. Each chain starts from iid fair coin flips; each update
// picks a uniform tile and resamples it from the conditional. After burn_in
// sweeps, the board is recorded every `thin` sweeps. Weights are counts.
BoardDataset gibbs_sample(const Conditional& model, const GibbsConfig& cfg);

// Single-chain variant recording the state after every single-tile update
// past `burn_in_steps`. Returns counts indexed by board mask.
std::vector<double> gibbs_state_counts(const Conditional& model, int n,
                                       long steps, long burn_in_steps,
                                       std::uint64_t seed);

class NonErgodicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Transition matrix of the random-scan kernel, row-major [S, S] with
// S = 2^(n^2) (n^2 <= 16), as a sparse list per source state.
struct Transition {
  std::uint32_t to;
  double p;
};
std::vector<std::vector<Transition>> gibbs_kernel(const Conditional& model,
                                                  int n);

// Stationary distribution of the random-scan kernel indexed by board mask.
// Power iteration on the lazy kernel (I + T) / 2 until the L1 residual is
// below `tol`. Throws NonErgodicError when more than one closed class exists.
std::vector<double> exact_stationary(const Conditional& model, int n,
                                     double tol = 1e-12);

// Applies the kernel once: (pi T)[s'].
std::vector<double> apply_kernel(const std::vector<std::vector<Transition>>& k,
                                 const std::vector<double>& pi);

// Per-tile red frequency under the dataset weights.
std::vector<double> tile_marginals(const BoardDataset& dataset);

}  // namespace gridmind::priors

#endif  // GRIDMIND_PRIORS_HPP_
