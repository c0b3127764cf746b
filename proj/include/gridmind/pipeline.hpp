#ifndef GRIDMIND_PIPELINE_HPP_
#define GRIDMIND_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridmind/agent.hpp"
#include "gridmind/analysis.hpp"
#include "gridmind/board.hpp"
#include "gridmind/embeddings.hpp"
#include "gridmind/priors.hpp"
#include "gridmind/synthesis.hpp"

// End-to-end experiment orchestration and run manifests.
namespace gridmind::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// JSON forms of the stage configs; readers keep defaults for missing keys.
Json to_json(const priors::ConditionalTrainConfig& c);
Json to_json(const priors::GibbsConfig& c);
Json to_json(const synthesis::WakeSleepConfig& c);
void read_into(const Json& j, priors::ConditionalTrainConfig& c);
void read_into(const Json& j, priors::GibbsConfig& c);
void read_into(const Json& j, synthesis::WakeSleepConfig& c);

struct ExperimentConfig {
  std::filesystem::path out_dir = "gridmind-run";
  std::uint64_t seed = 0;
  int n = 4;
  int prior_count = 500;
  priors::ConditionalTrainConfig conditional;
  priors::GibbsConfig gibbs;
  synthesis::WakeSleepConfig synthesis;
  int synth_descriptions_per_board = 3;
  std::size_t text_dim = 768;
  // Provider names; each trains one grounded agent.
  std::vector<std::string> providers = {"program-recognition", "synthetic-featurized"};
  std::optional<std::filesystem::path> human_descriptions;
  std::optional<std::filesystem::path> ingested_embeddings;
  agent::PPOConfig ppo = agent::PPOConfig::grounding();
  agent::PPOConfig ppo_baseline = agent::PPOConfig::no_grounding();
  int eval_episodes = 20;
  int heuristic_runs = 1000;
  double test_fraction = 0.2;
  int resamples = 10000;

  void validate() const;
  Json to_json() const;
  // Missing keys keep their defaults.
  static ExperimentConfig from_json(const Json& j);
  // Replaces every stage seed when GRIDMIND_SEED is set.
  void apply_seed_override();
  std::uint64_t stage_seed(std::string_view stage) const;
};

// Parses GRIDMIND_SEED when set.
std::optional<std::uint64_t> env_seed();

struct Split {
  BoardDataset train;
  BoardDataset test;
};

// Seeded split by board id; the test side gets round(fraction * size)
// entries, at least one when the dataset has two or more.
Split split_by_id(const BoardDataset& dataset, double test_fraction,
                  std::uint64_t seed);

// Mean z on control boards minus mean z on prior boards.
double gap(const agent::EvalReport& control, const agent::EvalReport& prior);

struct AgentSummary {
  std::string name;
  std::string provider;  // empty for the baseline
  double prior_mean_z = 0.0;
  double prior_ci_low = 0.0;
  double prior_ci_high = 0.0;
  double control_mean_z = 0.0;
  double control_ci_low = 0.0;
  double control_ci_high = 0.0;
  double gap = 0.0;
  double grounding_first = 0.0;
  double grounding_last = 0.0;

  Json to_json() const;
};

struct ExperimentReport {
  std::vector<AgentSummary> agents;
  Json stages = Json::object();
  Json analysis = Json::object();

  Json to_json() const;
};

using StageLog = std::function<void(const std::string& stage, const std::string& message)>;

// gen-priors, conditional, gibbs, synthesize with and without a library,
// embed, train agents (baseline, autoencoder, one per provider), evaluate on
// held-out prior and control boards, analyze. Writes every artifact under
// cfg.out_dir. Errors are rethrown with the stage name prefixed.
ExperimentReport run_pipeline(const ExperimentConfig& cfg, const StageLog& log = {});

// Run manifest written next to a command's outputs.
struct Manifest {
  std::string command;
  Json config = Json::object();
  Json seeds = Json::object();
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;
  std::string started_at;

  Json to_json() const;
  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp();
std::uint64_t config_hash(const Json& config);

// Grounded agents trained on real versus board-shuffled embeddings of the
// same provider, compared on held-out boards for several seed pairs.
struct GroundingPair {
  std::uint64_t seed = 0;
  double real_z = 0.0;
  double shuffled_z = 0.0;
  double real_mse_first = 0.0;
  double real_mse_last = 0.0;
};

struct GroundingComparison {
  std::vector<GroundingPair> pairs;
  int real_wins = 0;

  Json to_json() const;
};

GroundingComparison compare_grounding(const BoardDataset& train,
                                      const BoardDataset& test,
                                      const embeddings::EmbeddingProvider& provider,
                                      const agent::PPOConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds,
                                      int eval_episodes, int heuristic_runs,
                                      const StageLog& log = {});

// Mean of the first and last `window` entries of a per-update series.
std::pair<double, double> endpoint_means(const std::vector<double>& series,
                                         std::size_t window);

}  // namespace gridmind::pipeline

#endif  // GRIDMIND_PIPELINE_HPP_
