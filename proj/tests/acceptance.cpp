// Acceptance suite: one pass/fail line per criterion with its tolerance.
//   gridmind_acceptance                      run every criterion
//   gridmind_acceptance --criterion NAME     run one

#include <CLI11.hpp>
#include <Eigen/Dense>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "agent_fixture.hpp"
#include "gridmind/agent.hpp"
#include "gridmind/analysis.hpp"
#include "gridmind/board.hpp"
#include "gridmind/dsl.hpp"
#include "gridmind/embeddings.hpp"
#include "gridmind/library_learning.hpp"
#include "gridmind/nn.hpp"
#include "gridmind/pipeline.hpp"
#include "gridmind/priors.hpp"
#include "gridmind/synthesis.hpp"
#include "oracles.hpp"

using namespace gridmind;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::string tolerance;
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

dsl::Program P(const std::string& text) { return dsl::parse_program(text, {}); }

// --- dsl-oracle ------------------------------------------------------------------

Outcome dsl_oracle() {
  const int n = 3;
  std::vector<Board> targets;
  std::vector<std::set<std::pair<int, int>>> target_cells;
  for (std::uint32_t m = 0; m < (1U << 9); ++m) {
    if (__builtin_popcount(m) > 3) continue;
    Board b(n);
    std::set<std::pair<int, int>> cells;
    for (int i = 0; i < 9; ++i) {
      if ((m >> i) & 1U) {
        b.set(i, true);
        cells.insert({i / n, i % n});
      }
    }
    targets.push_back(b);
    target_cells.push_back(cells);
  }
  const auto progs = oracle::programs_up_to(6);
  long compared = 0, mismatches = 0;
  for (const auto& tok : progs) {
    const dsl::Program p = P(oracle::to_text(tok));
    std::vector<oracle::SimResult> sims;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) sims.push_back(oracle::simulate(tok, r, c, n));
    }
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto expect = oracle::best_score(sims, target_cells[t]);
      const dsl::Score got = dsl::score(p, targets[t], {});
      const bool same = expect ? (got.is_finite() && got.value() == *expect) : !got.is_finite();
      ++compared;
      if (!same) {
        if (mismatches < 5) {
          std::cerr << "  mismatch: " << oracle::to_text(tok) << " on " << targets[t].to_string()
                    << " expected " << (expect ? std::to_string(*expect) : "-inf") << " got "
                    << got.to_string() << "\n";
        }
        ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(progs.size()) + " programs x " +
                               std::to_string(targets.size()) + " targets, " +
                               std::to_string(compared) + " scores, " +
                               std::to_string(mismatches) + " mismatches"};
}

// --- score-spots -------------------------------------------------------------------

Outcome score_spots() {
  std::vector<std::string> fails;
  auto expect = [&](const std::string& prog, const std::string& board, std::optional<int> want) {
    const dsl::Score s = dsl::score(P(prog), Board::parse(board), {});
    const bool ok = want ? (s.is_finite() && s.value() == *want) : !s.is_finite();
    if (!ok) fails.push_back("'" + prog + "' on " + board + " = " + s.to_string());
  };
  expect("", "111/000/000", -30);
  expect("", "100/010/001", -30);
  expect("", "1000/0000/0010/0001", -30);
  // Exact covers: k pen-down motions score -k.
  expect("pen-down", "0000/0100/0000/0000", 0);
  expect("pen-down move", "1100/0000/0000/0000", -1);
  expect("pen-down move move", "1110/0000/0000/0000", -2);
  expect("pen-down move move move", "1111/0000/0000/0000", -3);
  expect("pen-down move right move", "1100/0100/0000/0000", -3);
  expect("(fork pen-down move) right pen-down move", "110/100/000", -2);
  expect("pen-down pen-up move move pen-down", "101/000/000", 0);
  // Any mark outside the target.
  expect("pen-down move", "100/000/000", std::nullopt);
  expect("pen-down move move move", "1110/0000/0000/0000", std::nullopt);
  expect("pen-down", "000/000/000", std::nullopt);
  std::string detail = std::to_string(13 - fails.size()) + "/13 cases";
  for (const auto& f : fails) detail += "; " + f;
  return {fails.empty(), detail};
}

// --- library-learning ---------------------------------------------------------------

Outcome library_learning() {
  std::vector<std::string> fails;
  const auto pd3 = P("pen-down move move move");
  const std::vector<dsl::Program> corpus(3, pd3);
  const auto r = abstraction::compress(corpus, 1.5, 16);
  if (r.mdl_before != 12.0) fails.push_back("mdl before " + fmt(r.mdl_before));
  if (r.mdl_after != 9.0) fails.push_back("mdl after " + fmt(r.mdl_after));
  if (r.adopted.size() != 1 || r.adopted[0].body != pd3) {
    fails.push_back("adopted " + std::to_string(r.adopted.size()) + " abstractions");
  }

  // Planted motif among random filler.
  Rng rng(17);
  const std::string motif = "DLM";
  const std::string alphabet = "MLRU";
  std::vector<dsl::Program> planted;
  for (int i = 0; i < 8; ++i) {
    std::string tok;
    for (int k = 0; k < 3; ++k) tok += alphabet[uniform_index(rng, alphabet.size())];
    tok += motif;
    for (int k = 0; k < 3; ++k) tok += alphabet[uniform_index(rng, alphabet.size())];
    planted.push_back(P(oracle::to_text(tok)));
  }
  const auto pr = abstraction::compress(planted, 1.5, 4);
  const auto want = P(oracle::to_text(motif));
  bool found = false;
  for (const auto& a : pr.adopted) {
    if (dsl::inline_calls({dsl::Instruction::call(a.id)}, pr.library) == want) found = true;
  }
  if (!found) fails.push_back("planted motif not recovered");

  // Traces preserved and MDL never increases, over random corpora.
  int trace_checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<dsl::Program> progs;
    for (int i = 0; i < 10; ++i) {
      std::string tok;
      const int len = 4 + static_cast<int>(uniform_index(rng, 8));
      for (int k = 0; k < len; ++k) tok += std::string("MLRUDD")[uniform_index(rng, 6)];
      if (uniform01(rng) < 0.3) tok = "(" + tok.substr(0, 3) + ")" + tok;
      progs.push_back(P(oracle::to_text(tok)));
    }
    const auto res = abstraction::compress(progs, 1.5, 6);
    for (const auto& round : res.rounds) {
      if (round.mdl_delta < 0.0) fails.push_back("round increased MDL");
    }
    if (res.mdl_after > res.mdl_before) fails.push_back("MDL increased");
    for (std::size_t i = 0; i < progs.size(); ++i) {
      for (int rr = 0; rr < 4; ++rr) {
        for (int cc = 0; cc < 4; ++cc) {
          ++trace_checks;
          if (dsl::execute(progs[i], {rr, cc}, 4, {}) !=
              dsl::execute(res.rewritten[i], {rr, cc}, 4, res.library)) {
            fails.push_back("trace changed");
          }
        }
      }
    }
  }
  std::string detail = "mdl " + fmt(r.mdl_before) + " -> " + fmt(r.mdl_after) + ", " +
                       std::to_string(trace_checks) + " trace checks";
  for (std::size_t i = 0; i < std::min<std::size_t>(fails.size(), 3); ++i) detail += "; " + fails[i];
  return {fails.empty(), detail};
}

// --- gibbs-correctness ------------------------------------------------------------------

double table_conditional(const Board& b, int masked) {
  static const double p[3] = {0.2, 0.55, 0.85};
  const Cell c = b.cell(masked);
  int k = 0;
  if (b.red(c.row, 1 - c.col)) ++k;
  if (b.red(1 - c.row, c.col)) ++k;
  return p[k];
}

// Stationary distribution from a dense kernel built here, solved as the
// null space of (T^T - I) with a normalization row.
std::vector<double> dense_stationary(const priors::Conditional& cond, int n) {
  const int cells = n * n;
  const int S = 1 << cells;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) {
    Board b(n);
    for (int i = 0; i < cells; ++i) b.set(i, (s >> i) & 1);
    for (int i = 0; i < cells; ++i) {
      const double pr = cond(b, i);
      const int red = s | (1 << i), white = s & ~(1 << i);
      T(s, red) += pr / cells;
      T(s, white) += (1.0 - pr) / cells;
    }
  }
  Eigen::MatrixXd A(S + 1, S);
  A.topRows(S) = T.transpose() - Eigen::MatrixXd::Identity(S, S);
  A.row(S).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S + 1);
  rhs(S) = 1.0;
  const Eigen::VectorXd pi = A.colPivHouseholderQr().solve(rhs);
  return {pi.data(), pi.data() + S};
}

Outcome gibbs_correctness() {
  const auto exact = dense_stationary(table_conditional, 2);
  const auto lib_exact = priors::exact_stationary(table_conditional, 2);
  double solver_gap = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    solver_gap = std::max(solver_gap, std::abs(exact[i] - lib_exact[i]));
  }
  const auto counts = priors::gibbs_state_counts(table_conditional, 2, 100000, 0, 1);
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double tv = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) tv += std::abs(counts[i] / total - exact[i]);
  tv *= 0.5;
  return {tv <= 0.05 && solver_gap < 1e-9,
          "TV " + fmt(tv) + " over " + fmt(total, 7) + " states; solver gap " + fmt(solver_gap)};
}

// --- conditional-accuracy -----------------------------------------------------------------

Outcome conditional_accuracy() {
  const auto corpus = priors::generate_prior_corpus(priors::RuleGenerator::standard(4), 500, 3);
  priors::ConditionalModel model(4, 4);
  priors::ConditionalTrainConfig cfg;
  cfg.seed = 5;
  const auto losses = priors::train_conditional(model, corpus, cfg);
  const double acc = priors::masked_accuracy(model.as_conditional(), corpus, 20000, 6);
  return {acc >= 0.99, "masked accuracy " + fmt(acc) + " on " + std::to_string(corpus.size()) +
                           " distinct boards, final loss " + fmt(losses.back())};
}

// --- gradient-checks -------------------------------------------------------------------------

// Moves parameters off exact zeros so no ReLU input sits on its kink, where
// the one-sided analytic derivative and the central difference disagree.
void jitter(nn::ParamStore& ps, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, 0.05);
  for (auto& v : ps.vars()) {
    for (auto& x : v.mutable_value().values()) x += d(rng);
  }
}

Outcome gradient_checks() {
  std::map<std::string, double> err;

  {
    priors::ConditionalModel m(4, 21);
    jitter(m.params(), 23);
    Rng rng(22);
    std::vector<Board> boards;
    std::vector<int> masked;
    std::vector<double> target;
    for (int i = 0; i < 6; ++i) {
      Board b(4);
      for (int k = 0; k < 16; ++k) b.set(k, uniform01(rng) < 0.4);
      boards.push_back(b);
      masked.push_back(static_cast<int>(uniform_index(rng, 16)));
      target.push_back(b.red(masked.back()) ? 1.0 : 0.0);
    }
    err["conditional"] = nn::grad_check(
        [&] {
          return nn::bce_with_logits(m.forward(boards, masked),
                                     nn::constant(nn::Tensor({6, 1}, target)),
                                     {0.1, 0.2, 0.3, 0.1, 0.2, 0.1});
        },
        m.params());
  }

  {
    synthesis::RecognitionNet net(4, 8, 31);
    jitter(net.params(), 33);
    std::vector<Board> boards = {Board::parse("1111/0000/0000/0000"),
                                 Board::parse("1000/0100/0010/0001"),
                                 Board::parse("0110/0110/0000/0000")};
    nn::Tensor target({3, 8}, 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t j = 0; j < 8; ++j) target[b * 8 + j] = (j % 3 == b) ? 0.5 : 0.1;
    }
    err["recognition"] = nn::grad_check(
        [&] {
          auto out = net.forward(boards);
          return nn::add(nn::cross_entropy_loss(out.logits, nn::constant(target)),
                         nn::mean(nn::mul(out.embedding, out.embedding)));
        },
        net.params(), 1e-5, 40, 32);
  }

  {
    agent::PolicyNet net(3, nn::Activation::Tanh, 5, 41);
    Rng rng(42);
    auto randn = [&](nn::Shape s, double scale) {
      nn::Tensor t(s);
      std::normal_distribution<double> d(0.0, scale);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
      return nn::constant(t);
    };
    const auto obs0 = randn({2, 27}, 1.0), obs1 = randn({2, 27}, 1.0);
    nn::Tensor a0({2, 9}, 0.0), a1({2, 9}, 0.0);
    a1[2] = 1.0;
    a1[9 + 7] = 1.0;
    const auto r0 = nn::constant(nn::Tensor({2, 1}, 0.0));
    const auto r1 = nn::constant(nn::Tensor({2, 1}, std::vector<double>{-1.0, 1.0}));
    const auto h0 = randn({2, agent::PolicyNet::kLstm}, 0.3);
    const auto c0 = randn({2, agent::PolicyNet::kLstm}, 0.3);
    const auto mix = randn({2, 9}, 1.0);
    const auto psi = randn({2, 5}, 1.0);
    err["policy"] = nn::grad_check(
        [&] {
          auto s0 = net.step(obs0, nn::constant(a0), r0, h0, c0);
          auto s1 = net.step(obs1, nn::constant(a1), r1, s0.h, s0.c);
          nn::Var loss = nn::mean(nn::mul(nn::log_softmax(s1.logits), mix));
          loss = nn::add(loss, nn::mean(nn::mul(s1.value, s1.value)));
          loss = nn::add(loss, nn::mean(nn::entropy(s0.logits)));
          return nn::add(loss, nn::mse_loss(s1.psi_hat, psi));
        },
        net.params(), 1e-5, 40, 43);
  }

  {
    auto toy = fixture::toy_rollout(5, 0.5, 1);
    err["ppo+grounding"] = nn::grad_check(
        [&] { return agent::ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg).total; },
        toy.net.params(), 1e-5, 40, 3);
  }

  bool pass = true;
  std::string detail;
  for (const auto& [k, v] : err) {
    pass = pass && v < 1e-4;
    detail += (detail.empty() ? "" : ", ") + k + " " + fmt(v, 3);
  }
  return {pass, "max relative error: " + detail};
}

// --- rl-sanity ---------------------------------------------------------------------------------

BoardDataset full_rows() {
  BoardDataset ds;
  for (const auto& b : priors::family_boards(priors::RuleFamily::Row, 4)) {
    ds.add({board_id("row-", b), b, 1.0});
  }
  return ds;
}

Outcome rl_sanity() {
  auto cfg = agent::PPOConfig::grounding();
  cfg.c_task = 0.0;
  cfg.episodes = 50000;
  cfg.log_every = 5000;
  const auto data = full_rows();
  const auto res = agent::train(data, cfg, nullptr, 2024, [](const agent::CurveRow& r) {
    std::cerr << "  episode " << r.episode << " mean return " << fmt(r.mean_return) << "\n";
  });
  const auto rep = agent::evaluate(res.net, data, 50, 7);
  return {rep.mean_z < 0.0, "eval mean z " + fmt(rep.mean_z) + " [" + fmt(rep.ci_low) + ", " +
                                fmt(rep.ci_high) + "] after " + std::to_string(res.episodes) +
                                " episodes"};
}

// --- grounding-directional -----------------------------------------------------------------------

Outcome grounding_directional() {
  const auto corpus = priors::generate_prior_corpus(priors::RuleGenerator::standard(4), 500, 11);
  const auto playable = corpus.playable();
  const auto split = pipeline::split_by_id(playable, 0.2, 12);

  synthesis::WakeSleepConfig ws;
  ws.iterations = 2;
  ws.budget.max_nodes = 20000;
  ws.budget.timeout_seconds = 1e6;
  ws.dreams = 100;
  ws.seed = 13;
  const auto wsr = synthesis::wake_sleep(split.train, ws);
  const auto provider = embeddings::recognition_provider(wsr.recognition, playable);

  auto cfg = agent::PPOConfig::grounding();
  cfg.log_every = 10000;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
  const auto cmp = pipeline::compare_grounding(
      split.train, split.test, provider, cfg, seeds, 20, 1000,
      [](const std::string& stage, const std::string& m) {
        std::cerr << "  [" << stage << "] " << m << "\n";
      });
  double first = 0.0, last = 0.0;
  for (const auto& p : cmp.pairs) {
    first += p.real_mse_first;
    last += p.real_mse_last;
  }
  const double drop = first > 0.0 ? 1.0 - last / first : 0.0;
  return {cmp.real_wins >= 7 && drop >= 0.5,
          "real beats shuffled in " + std::to_string(cmp.real_wins) + "/10 pairs; aux MSE " +
              fmt(first / 10) + " -> " + fmt(last / 10) + " (" + fmt(100 * drop, 3) + "% drop)"};
}

// --- statistics ----------------------------------------------------------------------------------

Outcome statistics() {
  std::vector<std::string> fails;
  Rng rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto sample = [&](std::size_t k) {
    std::vector<double> v(k);
    for (double& x : v) x = nd(rng);
    return v;
  };
  std::vector<double> pb, pp;
  for (int s = 0; s < 500; ++s) {
    const auto a = sample(30), b = sample(30);
    pb.push_back(analysis::bootstrap_test(a, b, 1000, static_cast<std::uint64_t>(s)).p_value);
    const auto x = sample(30), y1 = sample(30), y2 = sample(30);
    pp.push_back(analysis::perm_corr_diff(x, y1, y2, 1000, static_cast<std::uint64_t>(s)).p_value);
  }
  const auto kb = analysis::ks_uniform(pb), kp = analysis::ks_uniform(pp);
  if (kb.p_value <= 0.01) fails.push_back("bootstrap p-values not uniform");
  if (kp.p_value <= 0.01) fails.push_back("permutation p-values not uniform");

  auto near = [](double a, double b) { return std::abs(a - b) < 1e-12; };
  if (!near(analysis::pearson({1, 2, 3, 4, 5}, {2, 4, 6, 8, 10}), 1.0) ||
      !near(analysis::pearson({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}), -1.0) ||
      !near(analysis::pearson({1, 2, 3}, {1, 3, 2}), 0.5) ||
      !near(analysis::pearson({1, 2, 3, 4}, {1, -1, -1, 1}), 0.0)) {
    fails.push_back("pearson hand case");
  }
  std::vector<std::vector<double>> vs;
  for (int i = 0; i < 6; ++i) vs.push_back(sample(12));
  const auto m = analysis::rsa_matrix(vs);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i][i] != 1.0) fails.push_back("rsa diagonal");
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m[i][j] != m[j][i]) fails.push_back("rsa symmetry");
    }
  }
  std::string detail = "KS p bootstrap " + fmt(kb.p_value) + ", permutation " + fmt(kp.p_value);
  for (const auto& f : fails) detail += "; " + f;
  return {fails.empty(), detail};
}

// --- description-length --------------------------------------------------------------------------

Outcome description_length() {
  std::vector<std::string> fails;
  std::vector<int> dl;
  for (int k = 1; k <= 16; ++k) {
    Board b(4);
    for (int i = 0; i < k; ++i) b.set(i, true);
    dl.push_back(embeddings::description_length(embeddings::synth_describe(b, 5)));
  }
  for (std::size_t i = 1; i < dl.size(); ++i) {
    if (dl[i] <= dl[i - 1]) fails.push_back("synthetic DL not increasing at " + std::to_string(i + 1));
  }

  const std::vector<dsl::Program> corpus = {
      P("pen-down move move right move"), P("left pen-down move move right move"),
      P("pen-down move move right move pen-up move"), P("right right pen-down move move"),
      P("pen-down move move right move move")};
  const auto r = abstraction::compress(corpus, 1.5, 8);
  auto mean_size = [](const std::vector<dsl::Program>& ps) {
    double s = 0.0;
    for (const auto& p : ps) s += dsl::program_size(p);
    return s / static_cast<double>(ps.size());
  };
  const double before = mean_size(corpus), after = mean_size(r.rewritten);
  if (r.adopted.empty()) fails.push_back("no abstraction adopted");
  if (!(after < before)) fails.push_back("mean program DL did not decrease");
  std::string detail = "synthetic DL " + std::to_string(dl.front()) + " .. " +
                       std::to_string(dl.back()) + "; mean program DL " + fmt(before) + " -> " +
                       fmt(after) + " with " + std::to_string(r.adopted.size()) + " abstractions";
  for (const auto& f : fails) detail += "; " + f;
  return {fails.empty(), detail};
}

// --- determinism -----------------------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + GRIDMIND_CLI_PATH + "\" " + args + " >> \"" +
                          log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

bool is_manifest(const fs::path& p) {
  const std::string name = p.filename().string();
  return name == "manifest.json" || name.size() > 14 && name.ends_with(".manifest.json");
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "gridmind-determinism";
  fs::remove_all(root);
  auto stages = [&](const fs::path& d) {
    fs::create_directories(d);
    auto q = [&](const char* f) { return "\"" + (d / f).string() + "\""; };
    const fs::path log = d.parent_path() / (d.filename().string() + ".log");
    const std::vector<std::string> cmds = {
        "gen-priors --count 200 --n 4 --seed 1 --out " + q("priors.jsonl"),
        "train-conditional --data " + q("priors.jsonl") + " --epochs 20 --seed 2 --out " +
            q("cond.ckpt"),
        "gibbs --model " + q("cond.ckpt") + " --chains 10 --sweeps 60 --burn-in 20 --thin 10 " +
            "--seed 3 --out " + q("control.jsonl"),
        "synthesize --tasks " + q("priors.jsonl") + " --iterations 2 --max-nodes 3000 " +
            "--timeout 100000 --dreams 20 --seed 4 --out-dir " + q("synth"),
        "describe-synth --data " + q("priors.jsonl") + " --per-board 2 --seed 5 --out " +
            q("desc.jsonl"),
        "embed --provider program-recognition --recognition " + q("synth/recognition.ckpt") +
            " --data " + q("priors.jsonl") + " --out " + q("emb.jsonl"),
        "train-agent --data " + q("priors.jsonl") + " --embeddings " + q("emb.jsonl") +
            " --episodes 256 --seed 6 --curve " + q("curve.csv") + " --out " + q("agent.ckpt"),
        "eval-agent --checkpoint " + q("agent.ckpt") + " --test " + q("control.jsonl") +
            " --episodes 2 --heuristic-runs 100 --seed 7 --traces-dir " + q("traces") +
            " --out " + q("eval.json"),
    };
    for (const auto& c : cmds) {
      if (run_cli(c, log) != 0) return "failed: " + c.substr(0, c.find(' '));
    }
    return std::string();
  };
  // Both runs use the same paths, since outputs record their inputs.
  for (const char* d : {"a", "b"}) {
    const std::string err = stages(root / "run");
    if (!err.empty()) return {false, std::string("run ") + d + " " + err};
    fs::rename(root / "run", root / d);
  }
  int files = 0;
  std::vector<std::string> diffs;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || is_manifest(e.path())) continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    ++files;
    const fs::path other = root / "b" / rel;
    if (!fs::exists(other) || read_text(e.path()) != read_text(other)) diffs.push_back(rel.string());
  }
  std::string detail = std::to_string(files) + " artifacts compared, " +
                       std::to_string(diffs.size()) + " differ";
  for (const auto& d : diffs) detail += "; " + d;
  if (diffs.empty()) fs::remove_all(root);
  return {diffs.empty() && files >= 10, detail};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"dsl-oracle", "exact match, programs <= 6 on 3x3, targets <= 3 reds", dsl_oracle},
      {"score-spots", "exact", score_spots},
      {"library-learning", "MDL 12 -> 9 exact; motif recovered; traces equal", library_learning},
      {"gibbs-correctness", "TV <= 0.05 at 1e5 steps", gibbs_correctness},
      {"conditional-accuracy", "masked accuracy >= 0.99", conditional_accuracy},
      {"gradient-checks", "relative error < 1e-4", gradient_checks},
      {"rl-sanity", "eval mean z < 0 after 50k episodes", rl_sanity},
      {"grounding-directional", "real wins >= 7/10, aux MSE drop >= 50%", grounding_directional},
      {"statistics", "KS p > 0.01 over 500 null simulations", statistics},
      {"description-length", "strict monotonicity", description_length},
      {"determinism", "byte-identical artifacts", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridmind acceptance suite"};
  std::vector<std::string> selected;
  app.add_option("--criterion", selected, "Criterion to run (repeatable); default all");
  bool list = false;
  app.add_flag("--list", list, "List criteria");
  CLI11_PARSE(app, argc, argv);
  if (list) {
    for (const auto& c : criteria()) std::cout << c.name << "\n";
    return 0;
  }
  for (const auto& s : selected) {
    const bool known = std::any_of(criteria().begin(), criteria().end(),
                                   [&](const Criterion& c) { return c.name == s; });
    if (!known) {
      std::cerr << "unknown criterion '" << s << "'\n";
      return 2;
    }
  }
  int failed = 0;
  for (const auto& c : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.name) == selected.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " [" << c.tolerance << "] "
              << o.detail << " (" << fmt(secs, 3) << " s)" << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
