#include "gridmind/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <set>

#include "gridmind/dsl.hpp"
#include "gridmind/env.hpp"

namespace gridmind::pipeline {

namespace {

template <typename T>
void read_key(const Json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

// --- stage configs ---------------------------------------------------------------

Json to_json(const priors::ConditionalTrainConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr}, {"batch_size", c.batch_size}, {"seed", c.seed}};
}

Json to_json(const priors::GibbsConfig& c) {
  return {{"n", c.n},           {"chains", c.chains}, {"sweeps", c.sweeps},
          {"burn_in", c.burn_in}, {"thin", c.thin},   {"seed", c.seed}};
}

Json to_json(const synthesis::WakeSleepConfig& c) {
  return {{"iterations", c.iterations},
          {"max_nodes", c.budget.max_nodes},
          {"max_program_size", c.budget.max_program_size},
          {"timeout_seconds", c.budget.timeout_seconds},
          {"lambda", c.lambda},
          {"library_learning", c.library_learning},
          {"max_new_functions", c.max_new_functions},
          {"dreams", c.dreams},
          {"dream_max_size", c.dream_max_size},
          {"dream_fraction", c.recognition.dream_fraction},
          {"recognition_epochs", c.recognition.epochs},
          {"recognition_lr", c.recognition.lr},
          {"seed", c.seed}};
}

void read_into(const Json& j, priors::ConditionalTrainConfig& c) {
  read_key(j, "epochs", c.epochs);
  read_key(j, "lr", c.lr);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "seed", c.seed);
}

void read_into(const Json& j, priors::GibbsConfig& c) {
  read_key(j, "n", c.n);
  read_key(j, "chains", c.chains);
  read_key(j, "sweeps", c.sweeps);
  read_key(j, "burn_in", c.burn_in);
  read_key(j, "thin", c.thin);
  read_key(j, "seed", c.seed);
}

void read_into(const Json& j, synthesis::WakeSleepConfig& c) {
  read_key(j, "iterations", c.iterations);
  read_key(j, "max_nodes", c.budget.max_nodes);
  read_key(j, "max_program_size", c.budget.max_program_size);
  read_key(j, "timeout_seconds", c.budget.timeout_seconds);
  read_key(j, "lambda", c.lambda);
  read_key(j, "library_learning", c.library_learning);
  read_key(j, "max_new_functions", c.max_new_functions);
  read_key(j, "dreams", c.dreams);
  read_key(j, "dream_max_size", c.dream_max_size);
  read_key(j, "dream_fraction", c.recognition.dream_fraction);
  read_key(j, "recognition_epochs", c.recognition.epochs);
  read_key(j, "recognition_lr", c.recognition.lr);
  read_key(j, "seed", c.seed);
}

// --- experiment config ----------------------------------------------------------

void ExperimentConfig::validate() const {
  if (n < 2 || n > Board::kMaxSide) throw ValidationError("n out of range");
  if (prior_count < 1) throw ValidationError("prior_count must be positive");
  if (gibbs.n != n) throw ValidationError("gibbs.n must equal n");
  gibbs.validate();
  if (synth_descriptions_per_board < 1) {
    throw ValidationError("synth_descriptions_per_board must be positive");
  }
  if (text_dim == 0) throw ValidationError("text_dim must be positive");
  for (const auto& p : providers) {
    const auto kind = embeddings::parse_provider_kind(p);
    if (kind == embeddings::ProviderKind::BoardAutoencoder) {
      throw ValidationError("the autoencoder agent is always trained; do not list it");
    }
    if (kind == embeddings::ProviderKind::Ingested && !ingested_embeddings) {
      throw ValidationError("provider 'ingested' needs ingested_embeddings");
    }
  }
  std::set<std::string> unique(providers.begin(), providers.end());
  if (unique.size() != providers.size()) throw ValidationError("duplicate provider");
  ppo.validate();
  ppo_baseline.validate();
  if (eval_episodes < 1) throw ValidationError("eval_episodes must be positive");
  if (heuristic_runs < 1) throw ValidationError("heuristic_runs must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must be in (0, 1)");
  }
  if (resamples < 1) throw ValidationError("resamples must be positive");
  for (const auto& p : {human_descriptions, ingested_embeddings}) {
    if (p && !std::filesystem::exists(*p)) {
      throw ValidationError("missing input " + p->string());
    }
  }
}

Json ExperimentConfig::to_json() const {
  Json j = {{"out_dir", out_dir.string()},
            {"seed", seed},
            {"n", n},
            {"prior_count", prior_count},
            {"conditional", pipeline::to_json(conditional)},
            {"gibbs", pipeline::to_json(gibbs)},
            {"synthesis", pipeline::to_json(synthesis)},
            {"synth_descriptions_per_board", synth_descriptions_per_board},
            {"text_dim", text_dim},
            {"providers", providers},
            {"ppo", ppo.to_json()},
            {"ppo_baseline", ppo_baseline.to_json()},
            {"eval_episodes", eval_episodes},
            {"heuristic_runs", heuristic_runs},
            {"test_fraction", test_fraction},
            {"resamples", resamples}};
  j["human_descriptions"] = human_descriptions ? Json(human_descriptions->string()) : Json();
  j["ingested_embeddings"] = ingested_embeddings ? Json(ingested_embeddings->string()) : Json();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig c;
  try {
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    read_key(j, "seed", c.seed);
    read_key(j, "n", c.n);
    c.gibbs.n = c.n;
    read_key(j, "prior_count", c.prior_count);
    if (j.contains("conditional")) read_into(j.at("conditional"), c.conditional);
    if (j.contains("gibbs")) read_into(j.at("gibbs"), c.gibbs);
    if (j.contains("synthesis")) read_into(j.at("synthesis"), c.synthesis);
    read_key(j, "synth_descriptions_per_board", c.synth_descriptions_per_board);
    read_key(j, "text_dim", c.text_dim);
    read_key(j, "providers", c.providers);
    if (j.contains("ppo")) c.ppo = agent::PPOConfig::from_json(j.at("ppo"));
    if (j.contains("ppo_baseline")) {
      Json b = j.at("ppo_baseline");
      if (!b.contains("preset")) b["preset"] = "no-grounding";
      c.ppo_baseline = agent::PPOConfig::from_json(b);
    }
    read_key(j, "eval_episodes", c.eval_episodes);
    read_key(j, "heuristic_runs", c.heuristic_runs);
    read_key(j, "test_fraction", c.test_fraction);
    read_key(j, "resamples", c.resamples);
    if (j.contains("human_descriptions") && !j.at("human_descriptions").is_null()) {
      c.human_descriptions = j.at("human_descriptions").get<std::string>();
    }
    if (j.contains("ingested_embeddings") && !j.at("ingested_embeddings").is_null()) {
      c.ingested_embeddings = j.at("ingested_embeddings").get<std::string>();
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  return c;
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("GRIDMIND_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument("trailing");
    return s;
  } catch (const std::exception&) {
    throw ValidationError(std::string("GRIDMIND_SEED is not an unsigned integer: ") + v);
  }
}

void ExperimentConfig::apply_seed_override() {
  if (const auto s = env_seed()) seed = *s;
}

std::uint64_t ExperimentConfig::stage_seed(std::string_view stage) const {
  return derive_seed(seed, stable_hash(stage));
}

// --- split and gap -------------------------------------------------------------

Split split_by_id(const BoardDataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset.at(a).id < dataset.at(b).id;
  });
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(dataset.size())));
  if (dataset.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, dataset.size() - 1);
  std::set<std::size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
  Split s;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (test_idx.count(i) ? s.test : s.train).add(dataset.at(i));
  }
  return s;
}

double gap(const agent::EvalReport& control, const agent::EvalReport& prior) {
  return control.mean_z - prior.mean_z;
}

Json AgentSummary::to_json() const {
  return {{"name", name},
          {"provider", provider},
          {"prior", {{"mean_z", prior_mean_z}, {"ci95", {prior_ci_low, prior_ci_high}}}},
          {"control",
           {{"mean_z", control_mean_z}, {"ci95", {control_ci_low, control_ci_high}}}},
          {"gap", gap},
          {"grounding_mse_first", grounding_first},
          {"grounding_mse_last", grounding_last}};
}

Json ExperimentReport::to_json() const {
  Json a = Json::array();
  for (const auto& s : agents) a.push_back(s.to_json());
  return {{"agents", a}, {"stages", stages}, {"analysis", analysis}};
}

std::pair<double, double> endpoint_means(const std::vector<double>& series,
                                         std::size_t window) {
  if (series.empty()) return {0.0, 0.0};
  window = std::clamp<std::size_t>(window, 1, series.size());
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    first += series[i];
    last += series[series.size() - 1 - i];
  }
  return {first / static_cast<double>(window), last / static_cast<double>(window)};
}

// --- manifest ------------------------------------------------------------------

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t config_hash(const Json& config) { return stable_hash(config.dump()); }

Json Manifest::to_json() const {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  return {{"command", command},
          {"config", config},
          {"config_hash", hash},
          {"seeds", seeds},
          {"outputs", outputs},
          {"version", kVersion},
          {"compiler", __VERSION__},
          {"wall_seconds", wall_seconds},
          {"started_at", started_at}};
}

void Manifest::write(const std::filesystem::path& path) const { write_json(path, to_json()); }

// --- pipeline --------------------------------------------------------------------

namespace {

template <typename F>
auto stage(const std::string& name, const StageLog& log, F&& fn) {
  if (log) log(name, "start");
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
}

BoardDataset merge(const BoardDataset& a, const BoardDataset& b) {
  BoardDataset out;
  std::set<std::string> seen;
  for (const auto* d : {&a, &b}) {
    for (const auto& e : d->entries()) {
      if (seen.insert(e.id).second) out.add(e);
    }
  }
  return out;
}

std::map<std::string, double> program_lengths(const BoardDataset& tasks,
                                              const std::vector<synthesis::SolveResult>& sols) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < tasks.size() && i < sols.size(); ++i) {
    if (sols[i].best_program) {
      out[tasks.at(i).id] = dsl::program_size(*sols[i].best_program);
    }
  }
  return out;
}

std::vector<double> z_values(const agent::EvalReport& r) {
  std::vector<double> z;
  for (const auto& t : r.traces) z.push_back(t.z);
  return z;
}

}  // namespace

ExperimentReport run_pipeline(const ExperimentConfig& cfg, const StageLog& log) {
  cfg.validate();
  const auto& dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  ExperimentReport report;
  auto note = [&](const std::string& s, const std::string& m) {
    if (log) log(s, m);
  };

  const BoardDataset prior_corpus = stage("gen-priors", log, [&] {
    auto d = priors::generate_prior_corpus(priors::RuleGenerator::standard(cfg.n),
                                           cfg.prior_count, cfg.stage_seed("gen-priors"));
    d.save_jsonl(dir / "priors.jsonl");
    report.stages["gen-priors"] = {{"boards", d.size()}, {"samples", cfg.prior_count}};
    return d;
  });

  priors::ConditionalModel cond = stage("train-conditional", log, [&] {
    priors::ConditionalModel m(cfg.n, cfg.stage_seed("conditional-init"));
    auto tc = cfg.conditional;
    tc.seed = cfg.stage_seed("train-conditional");
    const auto losses = priors::train_conditional(m, prior_corpus, tc);
    const double acc = priors::masked_accuracy(m.as_conditional(), prior_corpus, 2000,
                                               cfg.stage_seed("conditional-accuracy"));
    m.save(dir / "conditional.ckpt");
    report.stages["train-conditional"] = {{"final_loss", losses.back()},
                                          {"masked_accuracy", acc}};
    note("train-conditional", "accuracy " + std::to_string(acc));
    return m;
  });

  const BoardDataset control = stage("gibbs", log, [&] {
    auto g = cfg.gibbs;
    g.seed = cfg.stage_seed("gibbs");
    auto d = priors::gibbs_sample(cond.as_conditional(), g);
    d.save_jsonl(dir / "control.jsonl");
    const auto mp = priors::tile_marginals(prior_corpus);
    const auto mc = priors::tile_marginals(d);
    double diff = 0.0;
    for (std::size_t i = 0; i < mp.size(); ++i) diff = std::max(diff, std::abs(mp[i] - mc[i]));
    report.stages["gibbs"] = {{"boards", d.size()},
                              {"all_white", d.count_all_white()},
                              {"max_marginal_diff", diff}};
    return d;
  });

  const BoardDataset tasks = prior_corpus.playable();
  auto synth = [&](bool lib) {
    const std::string name = lib ? "synthesize-lib" : "synthesize-nolib";
    return stage(name, log, [&] {
      auto ws = cfg.synthesis;
      ws.library_learning = lib;
      ws.seed = cfg.stage_seed("synthesize");
      auto r = synthesis::wake_sleep(tasks, ws);
      const std::string tag = lib ? "lib" : "nolib";
      synthesis::save_solutions(dir / ("solutions-" + tag + ".jsonl"), r.solutions);
      r.library.save(dir / ("library-" + tag + ".json"));
      Json hist = Json::array();
      for (const auto& h : r.history) {
        hist.push_back({{"iteration", h.iteration},
                        {"solved_exact", h.solved_exact},
                        {"mdl_before", h.mdl_before},
                        {"mdl_after", h.mdl_after},
                        {"library_size", h.library_size},
                        {"recognition_loss", h.recognition_loss}});
      }
      report.stages[name] = {{"tasks", tasks.size()}, {"history", hist}};
      return r;
    });
  };
  synthesis::WakeSleepResult with_lib = synth(true);
  with_lib.recognition.save(dir / "recognition.ckpt");
  const synthesis::WakeSleepResult without_lib = synth(false);

  const BoardDataset all_boards = merge(prior_corpus, control).playable();
  embeddings::DescriptionCorpus synthetic;
  std::map<std::string, embeddings::EmbeddingProvider> providers;
  stage("embed", log, [&] {
    synthetic = embeddings::synth_corpus(all_boards, cfg.synth_descriptions_per_board,
                                         cfg.stage_seed("describe-synth"));
    synthetic.save_jsonl(dir / "descriptions-synthetic.jsonl");
    auto keep = [&](embeddings::EmbeddingProvider p) {
      const std::string name = embeddings::to_string(p.kind());
      p.export_jsonl(dir / ("embeddings-" + name + ".jsonl"));
      providers.emplace(name, std::move(p));
    };
    keep(embeddings::autoencoder_provider(all_boards));
    for (const auto& name : cfg.providers) {
      switch (embeddings::parse_provider_kind(name)) {
        case embeddings::ProviderKind::ProgramRecognition:
          keep(embeddings::recognition_provider(with_lib.recognition, all_boards));
          break;
        case embeddings::ProviderKind::SyntheticFeaturized:
          keep(embeddings::featurized_provider(synthetic, cfg.text_dim,
                                               cfg.stage_seed("featurize")));
          break;
        case embeddings::ProviderKind::Ingested:
          keep(embeddings::ingest_embeddings(*cfg.ingested_embeddings));
          break;
        case embeddings::ProviderKind::BoardAutoencoder:
          break;
      }
    }
    Json kinds = Json::array();
    for (const auto& [k, p] : providers) kinds.push_back({{"kind", k}, {"dim", p.dim()}});
    report.stages["embed"] = {{"providers", kinds}, {"descriptions", synthetic.size()}};
    return 0;
  });

  const Split prior_split = split_by_id(tasks, cfg.test_fraction, cfg.stage_seed("split-priors"));
  const Split control_split =
      split_by_id(control.playable(), cfg.test_fraction, cfg.stage_seed("split-control"));
  prior_split.train.save_jsonl(dir / "train.jsonl");
  prior_split.test.save_jsonl(dir / "test-prior.jsonl");
  control_split.test.save_jsonl(dir / "test-control.jsonl");

  const env::HeuristicTable table = stage("heuristic", log, [&] {
    auto t = env::heuristic_table(merge(prior_split.test, control_split.test),
                                  cfg.heuristic_runs, cfg.stage_seed("heuristic"));
    std::vector<Json> lines;
    for (const auto& [id, s] : t) lines.push_back(s.to_json());
    write_jsonl(dir / "heuristic.jsonl", lines);
    return t;
  });

  struct Plan {
    std::string name;
    std::string provider;
  };
  std::vector<Plan> plans = {{"baseline", ""},
                             {"autoencoder", embeddings::to_string(
                                                 embeddings::ProviderKind::BoardAutoencoder)}};
  for (const auto& p : cfg.providers) plans.push_back({"grounded-" + p, p});

  Json tests = Json::object();
  for (const auto& plan : plans) {
    stage("train-agent " + plan.name, log, [&] {
      const embeddings::EmbeddingProvider* prov =
          plan.provider.empty() ? nullptr : &providers.at(plan.provider);
      const agent::PPOConfig& pc = prov ? cfg.ppo : cfg.ppo_baseline;
      auto res = agent::train(prior_split.train, pc, prov,
                              cfg.stage_seed("train-agent " + plan.name),
                              [&](const agent::CurveRow& r) {
                                note("train-agent " + plan.name,
                                     "episode " + std::to_string(r.episode) + " return " +
                                         std::to_string(r.mean_return));
                              });
      res.net.save(dir / ("agent-" + plan.name + ".ckpt"),
                   {{"agent", plan.name}, {"provider", plan.provider}, {"ppo", pc.to_json()}});
      write_text(dir / ("curve-" + plan.name + ".csv"), res.curve_csv());

      const auto prior_eval = agent::evaluate(res.net, prior_split.test, cfg.eval_episodes,
                                              cfg.stage_seed("eval-prior"), &table);
      const auto control_eval = agent::evaluate(res.net, control_split.test, cfg.eval_episodes,
                                                cfg.stage_seed("eval-control"), &table);
      env::save_traces(dir / ("traces-" + plan.name + "-prior.jsonl"), prior_eval.traces);
      env::save_traces(dir / ("traces-" + plan.name + "-control.jsonl"), control_eval.traces);

      AgentSummary s;
      s.name = plan.name;
      s.provider = plan.provider;
      s.prior_mean_z = prior_eval.mean_z;
      s.prior_ci_low = prior_eval.ci_low;
      s.prior_ci_high = prior_eval.ci_high;
      s.control_mean_z = control_eval.mean_z;
      s.control_ci_low = control_eval.ci_low;
      s.control_ci_high = control_eval.ci_high;
      s.gap = gap(control_eval, prior_eval);
      const auto [first, last] = endpoint_means(
          res.grounding_history, std::max<std::size_t>(1, res.grounding_history.size() / 10));
      s.grounding_first = first;
      s.grounding_last = last;
      report.agents.push_back(s);

      const auto zc = z_values(control_eval), zp = z_values(prior_eval);
      if (zc.size() >= 2 && zp.size() >= 2) {
        tests[plan.name] = analysis::bootstrap_test(zc, zp, cfg.resamples,
                                                    cfg.stage_seed("bootstrap " + plan.name))
                               .to_json();
      }
      return 0;
    });
  }

  stage("analyze", log, [&] {
    Json a = {{"control_vs_prior", tests}};
    const auto human = cfg.human_descriptions
                           ? embeddings::DescriptionCorpus::load_jsonl(*cfg.human_descriptions)
                           : synthetic;
    a["human_source"] = cfg.human_descriptions ? "ingested" : "synthetic stand-in";
    const auto h = embeddings::mean_description_lengths(human);
    const auto s = embeddings::mean_description_lengths(synthetic);
    const auto lib = program_lengths(tasks, with_lib.solutions);
    const auto nolib = program_lengths(tasks, without_lib.solutions);
    std::map<std::string, double> hh, ss, ll, nn_;
    for (const auto& e : tasks.entries()) {
      if (h.count(e.id) && s.count(e.id) && lib.count(e.id) && nolib.count(e.id)) {
        hh[e.id] = h.at(e.id);
        ss[e.id] = s.at(e.id);
        ll[e.id] = lib.at(e.id);
        nn_[e.id] = nolib.at(e.id);
      }
    }
    try {
      const auto dl = analysis::dl_report(hh, ss, ll, nn_, cfg.resamples,
                                          cfg.stage_seed("dl-report"));
      write_text(dir / "description-lengths.csv", dl.to_csv());
      a["description_lengths"] = dl.to_json();
    } catch (const ValidationError& e) {
      a["description_lengths"] = {{"error", e.what()}};
    }
    Json rsa = Json::object();
    for (const auto& [name, p] : providers) {
      std::vector<std::string> ids;
      std::vector<std::vector<double>> vs;
      for (const auto& e : prior_split.test.entries()) {
        if (!p.contains(e.id)) continue;
        ids.push_back(e.id);
        vs.push_back(p.mean(e.id));
      }
      try {
        rsa[name] = {{"ids", ids}, {"matrix", analysis::rsa_matrix(vs)}};
      } catch (const ValidationError& e) {
        rsa[name] = {{"error", e.what()}};
      }
    }
    a["rsa"] = rsa;
    report.analysis = a;
    return 0;
  });

  write_json(dir / "report.json", report.to_json());
  return report;
}

// --- grounding comparison ----------------------------------------------------------

Json GroundingComparison::to_json() const {
  Json ps = Json::array();
  for (const auto& p : pairs) {
    ps.push_back({{"seed", p.seed},
                  {"real_z", p.real_z},
                  {"shuffled_z", p.shuffled_z},
                  {"real_mse_first", p.real_mse_first},
                  {"real_mse_last", p.real_mse_last}});
  }
  return {{"pairs", ps}, {"real_wins", real_wins}};
}

GroundingComparison compare_grounding(const BoardDataset& train, const BoardDataset& test,
                                      const embeddings::EmbeddingProvider& provider,
                                      const agent::PPOConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds,
                                      int eval_episodes, int heuristic_runs,
                                      const StageLog& log) {
  if (cfg.c_task <= 0.0) throw ValidationError("grounding comparison needs c_task > 0");
  const auto table = env::heuristic_table(test.playable(), heuristic_runs, 0);
  GroundingComparison out;
  for (const auto seed : seeds) {
    const auto shuffled = provider.shuffled(derive_seed(seed, 0x5eed));
    const auto real = agent::train(train, cfg, &provider, seed);
    const auto fake = agent::train(train, cfg, &shuffled, seed);
    GroundingPair p;
    p.seed = seed;
    p.real_z = agent::evaluate(real.net, test, eval_episodes, derive_seed(seed, 11), &table).mean_z;
    p.shuffled_z =
        agent::evaluate(fake.net, test, eval_episodes, derive_seed(seed, 11), &table).mean_z;
    const auto [first, last] = endpoint_means(
        real.grounding_history, std::max<std::size_t>(1, real.grounding_history.size() / 10));
    p.real_mse_first = first;
    p.real_mse_last = last;
    if (p.real_z < p.shuffled_z) ++out.real_wins;
    if (log) {
      log("grounding", "seed " + std::to_string(seed) + " real " + std::to_string(p.real_z) +
                           " shuffled " + std::to_string(p.shuffled_z));
    }
    out.pairs.push_back(p);
  }
  return out;
}

}  // namespace gridmind::pipeline
