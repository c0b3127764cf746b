#ifndef GRIDMIND_AGENT_HPP_
#define GRIDMIND_AGENT_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridmind/board.hpp"
#include "gridmind/embeddings.hpp"
#include "gridmind/env.hpp"
#include "gridmind/nn.hpp"

// LSTM meta-learner for the tile-reveal task, trained with clipped-surrogate
// policy optimization plus an optional task-grounding regression head.
namespace gridmind::agent {

struct PPOConfig {
  std::size_t batch_size = 256;
  std::size_t n_steps = 8;
  std::size_t n_envs = 32;
  double gamma = 0.9;
  double lr = 0.000376021;
  double ent_coef = 1.45674e-6;
  double clip = 0.3;
  int n_epochs = 5;
  double gae_lambda = 0.95;
  double max_grad_norm = 0.6;
  double vf_coef = 0.016291309;
  nn::Activation activation = nn::Activation::Tanh;
  double c_task = 0.494866282;
  long episodes = 50000;
  long log_every = 1000;
  env::EnvConfig env;

  static PPOConfig grounding();
  static PPOConfig no_grounding();
  static PPOConfig preset(const std::string& name);

  void validate() const;
  Json to_json() const;
  static PPOConfig from_json(const Json& j);
};

class PolicyNet {
 public:
  static constexpr std::size_t kChannels = 16;
  static constexpr std::size_t kEncoder = 64;
  static constexpr std::size_t kLstm = 120;
  static constexpr std::size_t kGroundingHidden = 64;

  // `grounding_dim` 0 builds no grounding head.
  PolicyNet(int n, nn::Activation act, std::size_t grounding_dim,
            std::uint64_t seed);

  PolicyNet(PolicyNet&&) = default;
  PolicyNet& operator=(PolicyNet&&) = default;
  PolicyNet(const PolicyNet&) = delete;
  PolicyNet& operator=(const PolicyNet&) = delete;

  int n() const { return n_; }
  std::size_t actions() const { return static_cast<std::size_t>(n_ * n_); }
  std::size_t grounding_dim() const { return grounding_dim_; }
  nn::Activation activation() const { return act_; }

  struct Output {
    nn::Var logits;   // [B, n^2]
    nn::Var value;    // [B, 1]
    nn::Var psi_hat;  // [B, grounding_dim], undefined without a head
    nn::Var h;        // [B, 120]
    nn::Var c;        // [B, 120]
  };

  // obs [B, 3 n^2] channel planes, prev_action [B, n^2] one-hot (zero row for
  // none), prev_reward [B, 1].
  Output step(const nn::Var& obs, const nn::Var& prev_action,
              const nn::Var& prev_reward, const nn::Var& h,
              const nn::Var& c) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Names of parameters belonging to each part of the network.
  std::vector<std::string> encoder_params() const;
  std::vector<std::string> grounding_params() const;
  std::vector<std::string> policy_value_params() const;

  void save(const std::filesystem::path& path, const Json& extra = {}) const;
  static PolicyNet load(const std::filesystem::path& path);

 private:
  int n_;
  nn::Activation act_;
  std::size_t grounding_dim_;
  nn::ParamStore ps_;
  nn::Conv2d conv_;
  nn::Dense enc_;
  nn::LstmCell lstm_;
  nn::Dense pi_;
  nn::Dense v_;
  nn::Dense g1_;
  nn::Dense g2_;
};

struct Hidden {
  std::vector<double> h;
  std::vector<double> c;
  static Hidden zeros() {
    return {std::vector<double>(PolicyNet::kLstm, 0.0),
            std::vector<double>(PolicyNet::kLstm, 0.0)};
  }
};

struct ActResult {
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  Hidden hidden;
  std::vector<double> probs;
};

// prev_action < 0 means none. Greedy takes the argmax (first on ties);
// otherwise the action is sampled from the softmax with `rng`.
ActResult act(const PolicyNet& net, const env::Observation& obs,
              int prev_action, double prev_reward, const Hidden& hidden,
              Rng* rng, bool greedy = false,
              const std::vector<std::uint8_t>* forbidden = nullptr);

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// values has one more entry than rewards (bootstrap value last).
// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
Gae compute_gae(const std::vector<double>& rewards,
                const std::vector<double>& values,
                const std::vector<std::uint8_t>& dones, double gamma,
                double lambda);

// (x - mean) / population std; all zeros when the std is zero.
std::vector<double> normalize(const std::vector<double>& x);

// Transitions stored time-major: index t * n_envs + e.
struct RolloutBuffer {
  std::size_t n_envs = 0;
  std::size_t n_steps = 0;
  std::size_t obs_dim = 0;
  std::size_t actions = 0;
  std::size_t psi_dim = 0;

  std::vector<double> obs;          // [T*E, obs_dim]
  std::vector<int> prev_action;     // -1 for none
  std::vector<double> prev_reward;
  std::vector<double> h;            // hidden before the step [T*E, 120]
  std::vector<double> c;
  std::vector<std::uint8_t> episode_start;
  std::vector<int> action;
  std::vector<double> log_prob;
  std::vector<double> value;
  std::vector<double> reward;
  std::vector<std::uint8_t> done;
  std::vector<double> psi;          // [T*E, psi_dim]
  std::vector<double> advantages;
  std::vector<double> returns;

  void reset(std::size_t envs, std::size_t steps, std::size_t obs_dim,
             std::size_t actions, std::size_t psi_dim);
  std::size_t size() const { return n_envs * n_steps; }
  // GAE per environment given bootstrap values for the state after the last step.
  void finish(const std::vector<double>& last_values, double gamma, double lambda);
};

// A run of consecutive steps of one environment inside the buffer.
struct Chunk {
  std::size_t env = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

// Splits every environment's segment into chunks so that a minibatch of
// batch_size transitions is a whole number of chunks.
std::vector<Chunk> make_chunks(const RolloutBuffer& buf, std::size_t batch_size);

struct LossParts {
  nn::Var total;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double grounding = 0.0;
  double clip_fraction = 0.0;
};

// Loss over the given chunks, unrolling the LSTM from each chunk's stored
// hidden state and zeroing it at episode starts. Advantages are normalized
// over the minibatch.
LossParts ppo_loss(const PolicyNet& net, const RolloutBuffer& buf,
                   const std::vector<Chunk>& chunks, const PPOConfig& cfg);

struct UpdateStats {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double grounding = 0.0;
  double grad_norm = 0.0;
};

UpdateStats ppo_update(PolicyNet& net, const RolloutBuffer& buf,
                       const PPOConfig& cfg, double lr, Rng& rng);

struct CurveRow {
  long episode = 0;
  double mean_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double grounding_mse = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  PolicyNet net;
  std::vector<CurveRow> curve;
  std::vector<double> grounding_history;  // per update
  long episodes = 0;
  long updates = 0;

  std::string curve_csv() const;
};

// Trains on boards drawn by weight. `provider` is required when
// cfg.c_task > 0 and must cover every playable board id.
TrainResult train(const BoardDataset& distribution, const PPOConfig& cfg,
                  const embeddings::EmbeddingProvider* provider,
                  std::uint64_t seed,
                  const std::function<void(const CurveRow&)>& on_log = {});

struct BoardEval {
  std::string board_id;
  double mean_z = 0.0;
  double mean_whites = 0.0;
  int episodes = 0;
};

struct EvalReport {
  std::vector<BoardEval> boards;
  double mean_z = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int episodes = 0;
  std::vector<env::EpisodeTrace> traces;

  Json to_json() const;
};

// Episode-level policy for evaluation: given the observation history state,
// returns an action. Used to evaluate non-network baselines as well.
using Policy = std::function<int(const env::EnvState& state, Rng& rng)>;

// Greedy rollouts restricted to covered tiles; z per episode against the
// heuristic table (computed when absent). Mean z with a 95% bootstrap CI
// over episodes.
EvalReport evaluate(const PolicyNet& net, const BoardDataset& test,
                    int episodes_per_board, std::uint64_t seed,
                    const env::HeuristicTable* table = nullptr,
                    int heuristic_runs = 1000);
EvalReport evaluate_policy(const Policy& policy, const BoardDataset& test,
                           int episodes_per_board, std::uint64_t seed,
                           const env::HeuristicTable* table = nullptr,
                           int heuristic_runs = 1000);

}  // namespace gridmind::agent

#endif  // GRIDMIND_AGENT_HPP_
