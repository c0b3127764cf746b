#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gridmind/priors.hpp"

using namespace gridmind;
using namespace gridmind::priors;

namespace {

// Hand-set conditional on 2x2: P(red) depends on the number of red
// neighbours (cells sharing a row or column).
double table_conditional(const Board& b, int masked) {
  static const double p[3] = {0.2, 0.55, 0.85};
  const Cell c = b.cell(masked);
  int k = 0;
  if (b.red(c.row, 1 - c.col)) ++k;
  if (b.red(1 - c.row, c.col)) ++k;
  return p[k];
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return 0.5 * d;
}

}  // namespace

TEST_SUITE("priors") {
  TEST_CASE("family sizes on 4x4") {
    CHECK(family_boards(RuleFamily::Row, 4).size() == 4);
    CHECK(family_boards(RuleFamily::Column, 4).size() == 4);
    CHECK(family_boards(RuleFamily::Diagonal, 4).size() == 2);
    for (auto f : all_rule_families()) {
      auto boards = family_boards(f, 4);
      CHECK(!boards.empty());
      std::set<Board> unique(boards.begin(), boards.end());
      CHECK(unique.size() == boards.size());
      for (const auto& b : boards) {
        CHECK(b.red_count() >= 1);
        CHECK(rule_witness(b).has_value());
      }
    }
    CHECK(parse_rule_family(to_string(RuleFamily::RectOutline)) == RuleFamily::RectOutline);
  }

  TEST_CASE("outlines are never a filled rectangle minus one cell") {
    for (const auto& o : family_boards(RuleFamily::RectOutline, 5)) {
      for (const auto& f : family_boards(RuleFamily::RectFill, 5)) {
        if (__builtin_popcountll(f.mask() ^ o.mask()) == 1) {
          CHECK((f.mask() & o.mask()) != o.mask());
        }
      }
    }
  }

  TEST_CASE("row-only mixture gives full rows") {
    RuleGenerator gen{4, {{RuleFamily::Row, 1.0}}};
    auto ds = generate_prior_corpus(gen, 200, 3);
    auto rows = family_boards(RuleFamily::Row, 4);
    double total = 0.0;
    for (const auto& e : ds.entries()) {
      CHECK(std::find(rows.begin(), rows.end(), e.board) != rows.end());
      total += e.weight;
    }
    CHECK(total == 200.0);
    CHECK(ds.size() == 4);
  }

  TEST_CASE("corpus is seed-deterministic and witnessed") {
    auto gen = RuleGenerator::standard(4);
    auto a = generate_prior_corpus(gen, 500, 7);
    auto b = generate_prior_corpus(gen, 500, 7);
    CHECK(a.to_jsonl() == b.to_jsonl());
    double witnessed = 0.0, total = 0.0;
    for (const auto& e : a.entries()) {
      total += e.weight;
      if (rule_witness(e.board)) witnessed += e.weight;
    }
    CHECK(witnessed / total >= 0.99);
  }

  TEST_CASE("conditional ignores the masked cell") {
    ConditionalModel m(4, 2);
    Board b = Board::parse("1010/0101/1100/0011");
    for (int i = 0; i < 16; ++i) {
      Board flip = b;
      flip.set(i, !b.red(i));
      CHECK(m.prob_red(b, i) == m.prob_red(flip, i));
      double p = m.prob_red(b, i);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }

  TEST_CASE("graph and graph-free evaluation agree") {
    ConditionalModel m(4, 3);
    std::vector<Board> boards = {Board::parse("1000/0100/0010/0001"),
                                 Board::parse("1111/0000/0000/0000")};
    std::vector<int> masked = {5, 2};
    auto logits = m.forward(boards, masked);
    for (std::size_t i = 0; i < 2; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits.value()[i]));
      CHECK(p == doctest::Approx(m.prob_red(boards[i], masked[i])).epsilon(1e-12));
    }
  }

  TEST_CASE("all-red dataset trains to certainty") {
    BoardDataset ds;
    ds.add({"red", Board::parse("1111/1111/1111/1111"), 1.0});
    ConditionalModel m(4, 1);
    ConditionalTrainConfig cfg;
    cfg.epochs = 100;
    train_conditional(m, ds, cfg);
    for (int i = 0; i < 16; ++i) CHECK(m.prob_red(ds.at(0).board, i) > 0.99);
  }

  TEST_CASE("loss decreases over the first epochs") {
    auto ds = generate_prior_corpus(RuleGenerator::standard(4), 100, 1);
    ConditionalModel m(4, 5);
    ConditionalTrainConfig cfg;
    cfg.epochs = 5;
    auto losses = train_conditional(m, ds, cfg);
    REQUIRE(losses.size() == 5);
    for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
  }

  TEST_CASE("masked accuracy of perfect and chance models") {
    auto ds = generate_prior_corpus(RuleGenerator::standard(4), 100, 2);
    Conditional perfect = [](const Board& b, int i) { return b.red(i) ? 1.0 : 0.0; };
    CHECK(masked_accuracy(perfect, ds, 1000, 1) == 1.0);
    // balanced data: checkerboards
    BoardDataset bal;
    bal.add({"x", Board::parse("1010/0101/1010/0101"), 1.0});
    bal.add({"y", Board::parse("0101/1010/0101/1010"), 1.0});
    Conditional coin = [](const Board&, int) { return 0.5; };
    CHECK(std::abs(masked_accuracy(coin, bal, 10000, 3) - 0.5) < 0.02);
  }

  TEST_CASE("checkpoint round trip") {
    ConditionalModel m(3, 8, nn::Activation::Tanh);
    auto path = std::filesystem::temp_directory_path() / "gridmind-cond.ckpt";
    m.save(path);
    auto back = ConditionalModel::load(path);
    CHECK(back.n() == 3);
    CHECK(back.activation() == nn::Activation::Tanh);
    Board b = Board::parse("101/010/001");
    for (int i = 0; i < 9; ++i) CHECK(back.prob_red(b, i) == m.prob_red(b, i));
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
  }

  TEST_CASE("absorbing conditional yields only the all-red board") {
    Conditional red = [](const Board&, int) { return 1.0; };
    GibbsConfig cfg;
    cfg.n = 3;
    cfg.chains = 5;
    cfg.sweeps = 60;
    cfg.burn_in = 50;
    cfg.thin = 2;
    auto ds = gibbs_sample(red, cfg);
    REQUIRE(ds.size() == 1);
    CHECK(ds.at(0).board.red_count() == 9);
    CHECK(ds.at(0).weight == 25.0);
  }

  TEST_CASE("gibbs is seed-deterministic and validates its config") {
    Conditional coin = [](const Board&, int) { return 0.5; };
    GibbsConfig cfg;
    cfg.n = 3;
    cfg.chains = 4;
    cfg.sweeps = 20;
    cfg.burn_in = 5;
    cfg.seed = 9;
    CHECK(gibbs_sample(coin, cfg).to_jsonl() == gibbs_sample(coin, cfg).to_jsonl());
    GibbsConfig bad = cfg;
    bad.burn_in = 20;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.thin = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("exact stationary: fair coin, absorbing, fixed point") {
    Conditional coin = [](const Board&, int) { return 0.5; };
    auto pi = exact_stationary(coin, 2);
    REQUIRE(pi.size() == 16);
    for (double p : pi) CHECK(p == doctest::Approx(1.0 / 16.0).epsilon(1e-9));

    Conditional red = [](const Board&, int) { return 1.0; };
    auto point = exact_stationary(red, 2);
    CHECK(point[15] == doctest::Approx(1.0));

    auto t = exact_stationary(table_conditional, 2);
    double total = 0.0;
    for (double p : t) total += p;
    CHECK(std::abs(total - 1.0) < 1e-9);
    auto next = apply_kernel(gibbs_kernel(table_conditional, 2), t);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(next[i] - t[i]) < 1e-10);
  }

  TEST_CASE("non-ergodic chain is reported") {
    // Cell 0 copies cell 3 and vice versa; cells 1 and 2 are always white:
    // both {} and {0,3} are absorbing.
    Conditional copy = [](const Board& b, int i) {
      if (i == 0) return b.red(3) ? 1.0 : 0.0;
      if (i == 3) return b.red(0) ? 1.0 : 0.0;
      return 0.0;
    };
    CHECK_THROWS_AS(exact_stationary(copy, 2), NonErgodicError);
  }

  TEST_CASE("kernel leaves a known joint invariant") {
    // Joint over 2x2 boards proportional to exp(0.7 * reds + 0.4 * adjacent pairs);
    // its exact conditionals make it stationary.
    auto weight = [](std::uint64_t m) {
      Board b = Board::from_mask(2, m);
      int pairs = 0;
      if (b.red(0) && b.red(1)) ++pairs;
      if (b.red(2) && b.red(3)) ++pairs;
      if (b.red(0) && b.red(2)) ++pairs;
      if (b.red(1) && b.red(3)) ++pairs;
      return std::exp(0.7 * b.red_count() + 0.4 * pairs);
    };
    Conditional cond = [&](const Board& b, int i) {
      Board r = b, w = b;
      r.set(i, true);
      w.set(i, false);
      const double a = weight(r.mask()), c = weight(w.mask());
      return a / (a + c);
    };
    std::vector<double> joint(16);
    double z = 0.0;
    for (std::uint64_t m = 0; m < 16; ++m) z += (joint[m] = weight(m));
    for (double& p : joint) p /= z;
    auto pi = exact_stationary(cond, 2);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(pi[i] - joint[i]) < 1e-9);
  }

  TEST_CASE("empirical state frequencies approach the stationary law") {
    auto counts = gibbs_state_counts(table_conditional, 2, 100000, 1000, 4);
    double total = 0.0;
    for (double c : counts) total += c;
    std::vector<double> emp(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) emp[i] = counts[i] / total;
    CHECK(total_variation(emp, exact_stationary(table_conditional, 2)) < 0.05);
  }

  TEST_CASE("kernel flip probabilities equal the conditionals") {
    auto kernel = gibbs_kernel(table_conditional, 2);
    REQUIRE(kernel.size() == 16);
    for (std::uint32_t s = 0; s < 16; ++s) {
      Board b = Board::from_mask(2, s);
      double total = 0.0;
      for (const auto& t : kernel[s]) {
        total += t.p;
        const std::uint32_t diff = t.to ^ s;
        if (diff == 0) continue;
        REQUIRE(__builtin_popcount(diff) == 1);
        const int i = __builtin_ctz(diff);
        const double p_red = table_conditional(b, i);
        CHECK(t.p == doctest::Approx(0.25 * (b.red(i) ? 1.0 - p_red : p_red)));
      }
      CHECK(total == doctest::Approx(1.0));
    }
  }

  TEST_CASE("tile marginals") {
    BoardDataset ds;
    ds.add({"a", Board::parse("11/00"), 3.0});
    ds.add({"b", Board::parse("01/01"), 1.0});
    auto m = tile_marginals(ds);
    CHECK(m[0] == doctest::Approx(0.75));
    CHECK(m[1] == doctest::Approx(1.0));
    CHECK(m[2] == doctest::Approx(0.0));
    CHECK(m[3] == doctest::Approx(0.25));
  }

  TEST_CASE("control marginals track the prior corpus" * doctest::may_fail()) {
    // Known shortfall: the Gibbs chain under the learned conditional drifts
    // from the corpus marginals by more than 0.05 on several tiles.
    auto prior = generate_prior_corpus(RuleGenerator::standard(4), 500, 0);
    ConditionalModel m(4, 1);
    ConditionalTrainConfig cfg;
    cfg.epochs = 100;
    train_conditional(m, prior, cfg);
    GibbsConfig g;
    g.chains = 50;
    g.sweeps = 200;
    g.burn_in = 50;
    auto control = gibbs_sample(m.as_conditional(), g);
    auto a = tile_marginals(prior);
    auto b = tile_marginals(control);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    MESSAGE("max marginal difference " << worst);
    CHECK(worst <= 0.05);
  }
}
