#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridmind/agent.hpp"
#include "gridmind/analysis.hpp"
#include "gridmind/board.hpp"
#include "gridmind/dsl.hpp"
#include "gridmind/embeddings.hpp"
#include "gridmind/env.hpp"
#include "gridmind/library_learning.hpp"
#include "gridmind/pipeline.hpp"
#include "gridmind/priors.hpp"
#include "gridmind/service.hpp"
#include "gridmind/synthesis.hpp"

namespace fs = std::filesystem;
using namespace gridmind;

namespace {

// Per-run bookkeeping shared by all subcommands.
struct Run {
  pipeline::Manifest manifest;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::optional<fs::path> manifest_path;

  std::uint64_t seed(const std::string& name, std::uint64_t flag) {
    const std::uint64_t s = pipeline::env_seed().value_or(flag);
    manifest.seeds[name] = s;
    return s;
  }
  void output(const fs::path& p) {
    manifest.outputs.push_back(p.string());
    if (!manifest_path) manifest_path = fs::path(p.string() + ".manifest.json");
  }
  void finish() {
    if (!manifest_path) return;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest.write(*manifest_path);
  }
};

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("missing input " + p.string());
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string board_art(const env::Observation& obs) {
  std::string s;
  for (int r = 0; r < obs.n; ++r) {
    for (int c = 0; c < obs.n; ++c) {
      const auto t = obs.tiles[static_cast<std::size_t>(r * obs.n + c)];
      s += t == env::Tile::Masked ? '#' : t == env::Tile::Red ? 'R' : '.';
    }
    s += '\n';
  }
  return s;
}

service::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridmind: inductive-bias workbench for tile-reveal meta-RL"};
  app.require_subcommand(1);
  Run run;
  std::function<void()> action;

  // gen-priors
  int count = 500, side = 4;
  std::uint64_t seed = 0;
  fs::path out;
  std::vector<std::string> mixture;
  auto* gen = app.add_subcommand("gen-priors", "Sample a rule-generated prior corpus");
  gen->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--n", side, "Board side")->check(CLI::Range(2, Board::kMaxSide));
  gen->add_option("--family", mixture, "family=weight (repeatable); default standard mixture");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--out", out, "Dataset JSONL")->required();
  gen->callback([&] {
    action = [&] {
      auto g = priors::RuleGenerator::standard(side);
      if (!mixture.empty()) {
        g.mixture.clear();
        for (const auto& m : mixture) {
          const auto eq = m.find('=');
          if (eq == std::string::npos) throw ValidationError("--family expects family=weight");
          g.mixture.emplace_back(priors::parse_rule_family(m.substr(0, eq)),
                                 std::stod(m.substr(eq + 1)));
        }
      }
      const auto d = priors::generate_prior_corpus(g, count, run.seed("gen-priors", seed));
      ensure_parent(out);
      d.save_jsonl(out);
      run.output(out);
      std::cout << d.size() << " distinct boards from " << count << " samples -> " << out.string()
                << "\n";
    };
  });

  // train-conditional
  fs::path data;
  priors::ConditionalTrainConfig ctc;
  int acc_trials = 2000;
  auto* tc = app.add_subcommand("train-conditional", "Train the masked-tile conditional model");
  tc->add_option("--data", data, "Board dataset JSONL")->required();
  tc->add_option("--epochs", ctc.epochs)->check(CLI::PositiveNumber);
  tc->add_option("--lr", ctc.lr)->check(CLI::PositiveNumber);
  tc->add_option("--batch", ctc.batch_size)->check(CLI::PositiveNumber);
  tc->add_option("--accuracy-trials", acc_trials)->check(CLI::PositiveNumber);
  tc->add_option("--seed", seed);
  tc->add_option("--out", out, "Checkpoint path")->required();
  tc->callback([&] {
    action = [&] {
      require_file(data);
      const auto d = BoardDataset::load_jsonl(data);
      if (d.empty()) throw ValidationError(data.string() + ": empty dataset");
      const std::uint64_t s = run.seed("train-conditional", seed);
      priors::ConditionalModel m(d.at(0).board.n(), derive_seed(s, 1));
      ctc.seed = derive_seed(s, 2);
      const auto losses = priors::train_conditional(m, d, ctc);
      const double acc = priors::masked_accuracy(m.as_conditional(), d, acc_trials, derive_seed(s, 3));
      ensure_parent(out);
      m.save(out);
      run.output(out);
      run.manifest.config["final_loss"] = losses.back();
      run.manifest.config["masked_accuracy"] = acc;
      std::cout << "final loss " << losses.back() << ", masked accuracy " << acc << "\n";
    };
  });

  // gibbs
  fs::path model;
  priors::GibbsConfig gc;
  auto* gb = app.add_subcommand("gibbs", "Gibbs-sample a control corpus from a conditional model");
  gb->add_option("--model", model, "Conditional checkpoint")->required();
  gb->add_option("--chains", gc.chains)->check(CLI::PositiveNumber);
  gb->add_option("--sweeps", gc.sweeps)->check(CLI::PositiveNumber);
  gb->add_option("--burn-in", gc.burn_in)->check(CLI::NonNegativeNumber);
  gb->add_option("--thin", gc.thin)->check(CLI::PositiveNumber);
  gb->add_option("--seed", seed);
  gb->add_option("--out", out, "Dataset JSONL")->required();
  gb->callback([&] {
    action = [&] {
      require_file(model);
      const auto m = priors::ConditionalModel::load(model);
      gc.n = m.n();
      gc.seed = run.seed("gibbs", seed);
      const auto d = priors::gibbs_sample(m.as_conditional(), gc);
      ensure_parent(out);
      d.save_jsonl(out);
      run.output(out);
      std::cout << d.size() << " distinct boards -> " << out.string() << "\n";
    };
  });

  // synthesize
  fs::path out_dir;
  synthesis::WakeSleepConfig wsc;
  bool no_library = false;
  auto* sy = app.add_subcommand("synthesize", "Wake/sleep program synthesis over a board dataset");
  sy->add_option("--tasks", data, "Board dataset JSONL")->required();
  sy->add_option("--iterations", wsc.iterations)->check(CLI::PositiveNumber);
  sy->add_option("--max-nodes", wsc.budget.max_nodes)->check(CLI::PositiveNumber);
  sy->add_option("--max-size", wsc.budget.max_program_size)->check(CLI::PositiveNumber);
  sy->add_option("--timeout", wsc.budget.timeout_seconds)->check(CLI::PositiveNumber);
  sy->add_option("--lambda", wsc.lambda)->check(CLI::NonNegativeNumber);
  sy->add_option("--dreams", wsc.dreams)->check(CLI::NonNegativeNumber);
  sy->add_flag("--no-library", no_library, "Disable library learning");
  sy->add_option("--seed", seed);
  sy->add_option("--out-dir", out_dir)->required();
  sy->callback([&] {
    action = [&] {
      require_file(data);
      const auto tasks = BoardDataset::load_jsonl(data).playable();
      wsc.library_learning = !no_library;
      wsc.seed = run.seed("synthesize", seed);
      const auto r = synthesis::wake_sleep(tasks, wsc);
      fs::create_directories(out_dir);
      synthesis::save_solutions(out_dir / "solutions.jsonl", r.solutions);
      r.library.save(out_dir / "library.json");
      r.recognition.save(out_dir / "recognition.ckpt");
      Json hist = Json::array();
      for (const auto& h : r.history) {
        hist.push_back({{"iteration", h.iteration},
                        {"solved_exact", h.solved_exact},
                        {"mdl_before", h.mdl_before},
                        {"mdl_after", h.mdl_after},
                        {"library_size", h.library_size},
                        {"recognition_loss", h.recognition_loss}});
      }
      write_json(out_dir / "history.json", hist);
      run.manifest_path = out_dir / "manifest.json";
      for (auto f : {"solutions.jsonl", "library.json", "recognition.ckpt", "history.json"}) {
        run.output(out_dir / f);
      }
      run.manifest.config["synthesis"] = pipeline::to_json(wsc);
      std::cout << r.history.back().solved_exact << "/" << tasks.size()
                << " tasks solved exactly; library size " << r.library.size() << "\n";
    };
  });

  // compress
  fs::path solutions, library;
  abstraction::CompressOptions copt;
  auto* co = app.add_subcommand("compress", "Learn abstractions over a solution set");
  co->add_option("--solutions", solutions, "Solutions JSONL")->required();
  co->add_option("--library", library, "Library the solutions refer to");
  co->add_option("--lambda", copt.lambda)->check(CLI::NonNegativeNumber);
  co->add_option("--max-functions", copt.max_new_functions)->check(CLI::NonNegativeNumber);
  co->add_option("--out-dir", out_dir)->required();
  co->callback([&] {
    action = [&] {
      require_file(solutions);
      dsl::Library base;
      if (!library.empty()) {
        require_file(library);
        base = dsl::Library::load(library);
      }
      const auto sols = synthesis::load_solutions(solutions, base);
      std::vector<dsl::Program> programs;
      std::vector<std::size_t> where;
      for (std::size_t i = 0; i < sols.size(); ++i) {
        if (sols[i].best_program && !sols[i].best_program->empty()) {
          programs.push_back(*sols[i].best_program);
          where.push_back(i);
        }
      }
      const auto res = abstraction::compress(programs, copt, base);
      auto rewritten = sols;
      for (std::size_t k = 0; k < where.size(); ++k) rewritten[where[k]].best_program = res.rewritten[k];
      fs::create_directories(out_dir);
      res.library.save(out_dir / "library.json");
      synthesis::save_solutions(out_dir / "solutions.jsonl", rewritten);
      write_json(out_dir / "report.json", res.report());
      run.manifest_path = out_dir / "manifest.json";
      for (auto f : {"library.json", "solutions.jsonl", "report.json"}) run.output(out_dir / f);
      std::cout << "MDL " << res.mdl_before << " -> " << res.mdl_after << " with "
                << res.adopted.size() << " new functions\n";
    };
  });

  // describe-synth
  int per_board = 3;
  auto* ds = app.add_subcommand("describe-synth", "Generate synthetic template descriptions");
  ds->add_option("--data", data, "Board dataset JSONL")->required();
  ds->add_option("--per-board", per_board)->check(CLI::PositiveNumber);
  ds->add_option("--seed", seed);
  ds->add_option("--out", out, "Description corpus JSONL")->required();
  ds->callback([&] {
    action = [&] {
      require_file(data);
      const auto c = embeddings::synth_corpus(BoardDataset::load_jsonl(data), per_board,
                                              run.seed("describe-synth", seed));
      ensure_parent(out);
      c.save_jsonl(out);
      run.output(out);
      std::cout << c.size() << " descriptions -> " << out.string() << "\n";
    };
  });

  // embed
  std::string provider_name;
  fs::path descriptions, recognition, input;
  std::size_t dim = 768;
  std::optional<std::uint64_t> shuffle_seed;
  auto* em = app.add_subcommand("embed", "Build a task-embedding table");
  em->add_option("--provider", provider_name,
                 "ingested | synthetic-featurized | program-recognition | board-autoencoder-target")
      ->required();
  em->add_option("--data", data, "Board dataset JSONL (recognition, autoencoder)");
  em->add_option("--descriptions", descriptions, "Description corpus (synthetic-featurized)");
  em->add_option("--dim", dim, "Feature dim (synthetic-featurized)")->check(CLI::PositiveNumber);
  em->add_option("--recognition", recognition, "Recognition checkpoint (program-recognition)");
  em->add_option("--input", input, "Embedding JSONL (ingested)");
  em->add_option("--shuffle-seed", shuffle_seed, "Permute the board assignment");
  em->add_option("--seed", seed, "Feature hash seed");
  em->add_option("--out", out, "Embedding JSONL")->required();
  em->callback([&] {
    action = [&] {
      auto need = [](const fs::path& p, const char* flag) {
        if (p.empty()) throw ValidationError(std::string("this provider needs ") + flag);
        require_file(p);
      };
      std::optional<embeddings::EmbeddingProvider> p;
      switch (embeddings::parse_provider_kind(provider_name)) {
        case embeddings::ProviderKind::Ingested:
          need(input, "--input");
          p = embeddings::ingest_embeddings(input);
          break;
        case embeddings::ProviderKind::SyntheticFeaturized:
          need(descriptions, "--descriptions");
          p = embeddings::featurized_provider(embeddings::DescriptionCorpus::load_jsonl(descriptions),
                                              dim, run.seed("featurize", seed));
          break;
        case embeddings::ProviderKind::ProgramRecognition:
          need(recognition, "--recognition");
          need(data, "--data");
          p = embeddings::recognition_provider(synthesis::RecognitionNet::load(recognition),
                                               BoardDataset::load_jsonl(data));
          break;
        case embeddings::ProviderKind::BoardAutoencoder:
          need(data, "--data");
          p = embeddings::autoencoder_provider(BoardDataset::load_jsonl(data));
          break;
      }
      if (shuffle_seed) p = p->shuffled(run.seed("shuffle", *shuffle_seed));
      ensure_parent(out);
      p->export_jsonl(out);
      run.output(out);
      std::cout << p->size() << " boards, dim " << p->dim() << " -> " << out.string() << "\n";
    };
  });

  // train-agent
  std::string preset = "grounding";
  fs::path config, embeddings_path, curve;
  std::optional<double> c_task;
  std::optional<long> episodes;
  auto* ta = app.add_subcommand("train-agent", "Train the LSTM policy with PPO");
  ta->add_option("--data", data, "Training board dataset JSONL")->required();
  ta->add_option("--preset", preset, "grounding | no-grounding");
  ta->add_option("--config", config, "PPO config JSON (overrides the preset)");
  ta->add_option("--embeddings", embeddings_path, "Task embedding JSONL for grounding");
  ta->add_option("--c-task", c_task, "Grounding coefficient")->check(CLI::NonNegativeNumber);
  ta->add_option("--episodes", episodes)->check(CLI::PositiveNumber);
  ta->add_option("--seed", seed);
  ta->add_option("--curve", curve, "Training curve CSV");
  ta->add_option("--out", out, "Checkpoint path")->required();
  ta->callback([&] {
    action = [&] {
      require_file(data);
      auto cfg = agent::PPOConfig::preset(preset);
      if (!config.empty()) {
        require_file(config);
        Json j = read_json(config);
        if (!j.contains("preset")) j["preset"] = preset;
        cfg = agent::PPOConfig::from_json(j);
      }
      if (c_task) cfg.c_task = *c_task;
      if (episodes) cfg.episodes = *episodes;
      std::optional<embeddings::EmbeddingProvider> prov;
      if (!embeddings_path.empty()) {
        require_file(embeddings_path);
        prov = embeddings::ingest_embeddings(embeddings_path);
      }
      if (cfg.c_task == 0.0) prov.reset();
      cfg.validate();
      run.manifest.config["ppo"] = cfg.to_json();
      const auto res = agent::train(BoardDataset::load_jsonl(data), cfg, prov ? &*prov : nullptr,
                                    run.seed("train-agent", seed), [](const agent::CurveRow& r) {
                                      std::cout << "episode " << r.episode << " mean return "
                                                << r.mean_return << "\n";
                                    });
      ensure_parent(out);
      res.net.save(out, {{"ppo", cfg.to_json()}});
      run.output(out);
      if (!curve.empty()) {
        ensure_parent(curve);
        write_text(curve, res.curve_csv());
        run.output(curve);
      }
      std::cout << res.episodes << " episodes, " << res.updates << " updates\n";
    };
  });

  // eval-agent
  fs::path checkpoint, traces_dir;
  std::vector<fs::path> tests;
  int eval_episodes = 20, heuristic_runs = 1000;
  auto* ea = app.add_subcommand("eval-agent", "Evaluate a policy checkpoint by heuristic z-score");
  ea->add_option("--checkpoint", checkpoint)->required();
  ea->add_option("--test", tests, "Test dataset JSONL (repeatable)")->required();
  ea->add_option("--episodes", eval_episodes, "Episodes per board")->check(CLI::PositiveNumber);
  ea->add_option("--heuristic-runs", heuristic_runs)->check(CLI::PositiveNumber);
  ea->add_option("--traces-dir", traces_dir, "Write per-distribution episode traces");
  ea->add_option("--seed", seed);
  ea->add_option("--out", out, "Report JSON")->required();
  ea->callback([&] {
    action = [&] {
      require_file(checkpoint);
      const auto net = agent::PolicyNet::load(checkpoint);
      const std::uint64_t s = run.seed("eval-agent", seed);
      Json report = {{"checkpoint", checkpoint.string()}, {"distributions", Json::object()}};
      for (const auto& t : tests) {
        require_file(t);
        const auto rep = agent::evaluate(net, BoardDataset::load_jsonl(t), eval_episodes,
                                         derive_seed(s, stable_hash(t.stem().string())), nullptr,
                                         heuristic_runs);
        report["distributions"][t.stem().string()] = rep.to_json();
        std::cout << t.stem().string() << ": mean z " << rep.mean_z << " [" << rep.ci_low << ", "
                  << rep.ci_high << "]\n";
        if (!traces_dir.empty()) {
          fs::create_directories(traces_dir);
          const auto tp = traces_dir / (t.stem().string() + "-traces.jsonl");
          env::save_traces(tp, rep.traces);
          run.output(tp);
        }
      }
      ensure_parent(out);
      write_json(out, report);
      run.manifest_path = fs::path(out.string() + ".manifest.json");
      run.output(out);
    };
  });

  // analyze
  fs::path human, synthetic, sol_lib, lib_lib, sol_nolib, tasks_path, csv;
  int resamples = 10000;
  auto* an = app.add_subcommand("analyze", "Description-length correlations and tests");
  an->add_option("--tasks", tasks_path, "Task dataset the solutions are aligned with")->required();
  an->add_option("--human", human, "Human description corpus (defaults to --synthetic)");
  an->add_option("--synthetic", synthetic, "Synthetic description corpus")->required();
  an->add_option("--solutions-lib", sol_lib)->required();
  an->add_option("--library", lib_lib, "Library for --solutions-lib")->required();
  an->add_option("--solutions-nolib", sol_nolib)->required();
  an->add_option("--resamples", resamples)->check(CLI::PositiveNumber);
  an->add_option("--seed", seed);
  an->add_option("--csv", csv, "Per-board CSV");
  an->add_option("--out", out, "Report JSON")->required();
  an->callback([&] {
    action = [&] {
      for (const auto* p : {&tasks_path, &synthetic, &sol_lib, &lib_lib, &sol_nolib}) require_file(*p);
      const auto tasks = BoardDataset::load_jsonl(tasks_path).playable();
      const auto synth = embeddings::DescriptionCorpus::load_jsonl(synthetic);
      const auto hum = human.empty() ? synth : embeddings::DescriptionCorpus::load_jsonl(human);
      const auto lib = dsl::Library::load(lib_lib);
      auto lengths = [&](const std::vector<synthesis::SolveResult>& sols) {
        std::map<std::string, double> m;
        for (const auto& s : sols) {
          if (s.best_program && tasks.find(s.task_id)) m[s.task_id] = dsl::program_size(*s.best_program);
        }
        return m;
      };
      const auto pl = lengths(synthesis::load_solutions(sol_lib, lib));
      const auto pn = lengths(synthesis::load_solutions(sol_nolib, {}));
      const auto h = embeddings::mean_description_lengths(hum);
      const auto sy2 = embeddings::mean_description_lengths(synth);
      std::map<std::string, double> hh, ss, ll, nn2;
      for (const auto& e : tasks.entries()) {
        if (h.count(e.id) && sy2.count(e.id) && pl.count(e.id) && pn.count(e.id)) {
          hh[e.id] = h.at(e.id);
          ss[e.id] = sy2.at(e.id);
          ll[e.id] = pl.at(e.id);
          nn2[e.id] = pn.at(e.id);
        }
      }
      const auto rep = analysis::dl_report(hh, ss, ll, nn2, resamples, run.seed("analyze", seed));
      ensure_parent(out);
      write_json(out, rep.to_json());
      run.output(out);
      if (!csv.empty()) {
        ensure_parent(csv);
        write_text(csv, rep.to_csv());
        run.output(csv);
      }
      std::cout << "r(human, lib) " << rep.r_human_lib << ", r(human, nolib) " << rep.r_human_nolib
                << ", p " << rep.diff.p_value << "\n";
    };
  });

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  fs::path log_path = "events.jsonl", static_dir;
  std::vector<std::string> datasets;
  std::optional<std::uint64_t> service_seed;
  auto* sv = app.add_subcommand("serve", "Run the session HTTP service");
  sv->add_option("--host", host);
  sv->add_option("--port", port)->check(CLI::Range(0, 65535));
  sv->add_option("--log", log_path, "Event log JSONL");
  sv->add_option("--dataset", datasets, "name=path (repeatable)");
  sv->add_option("--static", static_dir, "Web UI bundle directory");
  sv->add_option("--heuristic-runs", heuristic_runs)->check(CLI::PositiveNumber);
  sv->add_option("--seed", service_seed, "Seed session ids and choices (testing)");
  sv->callback([&] {
    action = [&] {
      service::ServiceConfig sc;
      sc.log_path = log_path;
      sc.heuristic_runs = heuristic_runs;
      if (service_seed) sc.seed = run.seed("serve", *service_seed);
      for (const auto& d : datasets) {
        const auto eq = d.find('=');
        if (eq == std::string::npos) throw ValidationError("--dataset expects name=path");
        const fs::path p = d.substr(eq + 1);
        require_file(p);
        sc.datasets[d.substr(0, eq)] = BoardDataset::load_jsonl(p);
      }
      service::SessionService svc(sc);
      service::HttpServer server(svc, static_dir);
      const int bound = server.bind(host, port);
      run.manifest_path = fs::path(log_path.string() + ".manifest.json");
      run.output(log_path);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << host << ":" << bound << " (" << svc.session_count()
                << " sessions replayed)" << std::endl;
      server.listen();
      g_server = nullptr;
    };
  });

  // play
  auto* pl = app.add_subcommand("play", "Play tile-reveal episodes in the terminal");
  pl->add_option("--data", data, "Board dataset JSONL")->required();
  pl->add_option("--heuristic-runs", heuristic_runs)->check(CLI::PositiveNumber);
  pl->add_option("--seed", seed);
  pl->add_option("--out", out, "Append finished traces here");
  pl->callback([&] {
    action = [&] {
      require_file(data);
      const auto d = BoardDataset::load_jsonl(data).playable();
      if (d.empty()) throw ValidationError("no playable boards");
      const std::uint64_t s = run.seed("play", seed);
      Rng rng(s);
      const auto& entry = d.at(d.sample_index(rng));
      const std::uint64_t env_seed = rng();
      auto st = env::reset(entry.board, env_seed);
      env::EpisodeTrace tr;
      tr.board_id = entry.id;
      tr.seed = env_seed;
      std::cout << "Reveal every red tile. Enter 'row col' (1-based); '#' is covered.\n";
      while (!st.done) {
        std::cout << board_art(st.observe()) << "> " << std::flush;
        int r = 0, c = 0;
        if (!(std::cin >> r >> c)) throw ValidationError("input ended before the episode finished");
        if (r < 1 || c < 1 || r > st.underlying.n() || c > st.underlying.n()) {
          std::cout << "out of range\n";
          continue;
        }
        const int a = st.underlying.index(r - 1, c - 1);
        const auto res = env::step(st, a);
        tr.actions.push_back(a);
        tr.rewards.push_back(res.reward);
        std::cout << "reward " << res.reward << "\n";
      }
      tr.whites = st.whites_revealed;
      tr.z = env::z_score(tr.whites, env::heuristic_stats(st.underlying, heuristic_runs,
                                                          env::heuristic_seed(st.underlying, 0)));
      std::cout << board_art(st.observe()) << "done: " << tr.whites << " whites, z = " << tr.z
                << " (below 0 beats the heuristic)\n";
      if (!out.empty()) {
        std::vector<env::EpisodeTrace> all;
        if (fs::exists(out)) all = env::load_traces(out);
        all.push_back(tr);
        ensure_parent(out);
        env::save_traces(out, all);
        run.output(out);
      }
    };
  });

  // run
  auto* rp = app.add_subcommand("run", "Run the full experiment pipeline from a JSON config");
  rp->add_option("--config", config, "Experiment config JSON")->required();
  rp->add_option("--out-dir", out_dir, "Override the config's output directory");
  rp->callback([&] {
    action = [&] {
      require_file(config);
      auto cfg = pipeline::ExperimentConfig::from_json(read_json(config));
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      cfg.apply_seed_override();
      run.manifest.seeds["experiment"] = cfg.seed;
      run.manifest.config["experiment"] = cfg.to_json();
      const auto rep = pipeline::run_pipeline(cfg, [](const std::string& st, const std::string& m) {
        std::cout << "[" << st << "] " << m << std::endl;
      });
      run.manifest_path = cfg.out_dir / "manifest.json";
      run.output(cfg.out_dir / "report.json");
      for (const auto& a : rep.agents) {
        std::cout << a.name << ": prior z " << a.prior_mean_z << ", control z " << a.control_mean_z
                  << ", gap " << a.gap << "\n";
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  run.manifest.command = app.get_subcommands().front()->get_name();
  run.manifest.started_at = pipeline::utc_timestamp();
  for (auto* sc : app.get_subcommands()) {
    for (const auto* opt : sc->get_options()) {
      if (opt->count() > 0 && opt->get_name() != "--help") {
        const auto r = opt->results();
        run.manifest.config["flags"][opt->get_name()] = r.size() == 1 ? Json(r[0]) : Json(r);
      }
    }
  }
  try {
    action();
    run.finish();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
