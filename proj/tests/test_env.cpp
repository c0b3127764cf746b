#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "gridmind/env.hpp"
#include "oracles.hpp"

using namespace gridmind;
using namespace gridmind::env;

namespace {

int revealed_count(const EnvState& s) {
  int k = 0;
  for (auto r : s.revealed) k += r;
  return k;
}

}  // namespace

TEST_SUITE("env") {
  TEST_CASE("reset reveals one red") {
    Board b = Board::parse("1100/0000/0000/0000");
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      EnvState s = reset(b, seed);
      CHECK(revealed_count(s) == 1);
      CHECK((s.revealed[0] + s.revealed[1]) == 1);
      CHECK(!s.done);
      Observation o = s.observe();
      CHECK(o.count(Tile::Masked) == 15);
      CHECK(o.count(Tile::Red) == 1);
    }
  }

  TEST_CASE("single red board is done at reset") {
    EnvState s = reset(Board::parse("0000/0010/0000/0000"), 3);
    CHECK(s.done);
    CHECK(s.whites_revealed == 0);
  }

  TEST_CASE("all-white board rejected") {
    CHECK_THROWS_AS(reset(Board(4), 0), ValidationError);
  }

  TEST_CASE("observation channels are one-hot per tile") {
    EnvState s = reset(Board::parse("1100/0000/0000/0000"), 1);
    step(s, 5);
    auto ch = s.observe().channels();
    REQUIRE(ch.size() == 48);
    for (int i = 0; i < 16; ++i) CHECK(ch[i] + ch[16 + i] + ch[32 + i] == 1.0);
  }

  TEST_CASE("rewards") {
    Board b = Board::parse("1110/0000/0000/0000");
    EnvState s = reset(b, 0);
    int first = 0;
    for (int i = 0; i < 3; ++i) {
      if (s.revealed[i]) first = i;
    }
    CHECK(step(s, 15).reward == -1);
    CHECK(s.whites_revealed == 1);
    auto before = s.revealed;
    CHECK(step(s, first).reward == -2);
    CHECK(step(s, 15).reward == -2);
    CHECK(s.revealed == before);
    int other = first == 0 ? 1 : 0;
    CHECK(step(s, other).reward == 1);
    int last = 3 - first - other;
    StepResult r = step(s, last);
    CHECK(r.reward == 5);
    CHECK(r.done);
    CHECK_THROWS(step(s, 4));
  }

  TEST_CASE("additive final bonus is configurable") {
    EnvConfig cfg;
    cfg.final_red_bonus_additive = true;
    EnvState s = reset(Board::parse("1100/0000/0000/0000"), 0);
    const int last = s.revealed[0] ? 1 : 0;
    CHECK(step(s, last, cfg).reward == 6);
  }

  TEST_CASE("action range and step cap") {
    EnvState s = reset(Board::parse("1100/0000/0000/0000"), 0);
    CHECK_THROWS(step(s, 16));
    CHECK_THROWS(step(s, -1));
    EnvConfig cfg;
    cfg.step_cap = 5;
    const int red = s.revealed[0] ? 0 : 1;
    int total = 0;
    for (int k = 0; k < 5; ++k) total += step(s, red, cfg).reward;
    CHECK(s.done);
    CHECK(total == -10);
  }

  TEST_CASE("returns are bounded and the mask is monotone") {
    Board b = Board::parse("1101/0010/1000/0001");
    Rng rng(5);
    for (int ep = 0; ep < 200; ++ep) {
      EnvState s = reset(b, rng);
      int ret = 0;
      auto prev = s.revealed;
      while (!s.done) {
        ret += step(s, static_cast<int>(uniform_index(rng, 16))).reward;
        for (int i = 0; i < 16; ++i) CHECK(s.revealed[i] >= prev[i]);
        prev = s.revealed;
      }
      CHECK(ret <= (b.red_count() - 1) + 5);
      CHECK(ret >= -2 * 50);
      int whites = 0;
      for (int i = 0; i < 16; ++i) whites += (s.revealed[i] && !b.red(i));
      CHECK(whites == s.whites_revealed);
    }
  }

  TEST_CASE("reference chain values for the two-red board") {
    // reds at (0,0) and (0,1) on 4x4
    oracle::HeuristicChain chain(4, 0b11);
    CHECK(oracle::HeuristicChain::mean(chain.from_start(0)) == doctest::Approx(0.5));
    CHECK(oracle::HeuristicChain::mean(chain.from_start(1)) == doctest::Approx(1.0));
    CHECK(oracle::HeuristicChain::mean(chain.from_random_start()) == doctest::Approx(0.75));
  }

  TEST_CASE("heuristic on an all-red board reveals no whites") {
    Board b = Board::parse("1111/1111/1111/1111");
    for (std::uint64_t s = 0; s < 10; ++s) CHECK(nn_heuristic_episode(b, s) == 0);
    auto st = heuristic_stats(b, 100, 1);
    CHECK(st.mean == 0.0);
    CHECK(st.std == 0.0);
  }

  TEST_CASE("heuristic stats match the exact chain") {
    Board b = Board::parse("1100/0000/0000/0000");
    auto st = heuristic_stats(b, 1000, 42, "pair");
    CHECK(st.runs == 1000);
    CHECK(st.board_id == "pair");
    const double se = st.std / std::sqrt(1000.0);
    CHECK(std::abs(st.mean - 0.75) < 3 * se);
    auto again = heuristic_stats(b, 1000, 42, "pair");
    CHECK(again.mean == st.mean);
    CHECK(again.std == st.std);
  }

  TEST_CASE("heuristic whites distribution matches enumeration on 3x3") {
    const int runs = 20000;
    double worst = 0.0;
    for (std::uint64_t m = 1; m < 512; ++m) {
      if (__builtin_popcountll(m) > 3) continue;
      Board b = Board::from_mask(3, m);
      oracle::HeuristicChain chain(3, m);
      auto exact = chain.from_random_start();
      std::map<int, double> emp;
      Rng rng(m);
      for (int k = 0; k < runs; ++k) emp[nn_heuristic_episode(b, rng)] += 1.0 / runs;
      double tv = 0.0;
      for (const auto& [w, p] : exact) tv += std::abs(p - (emp.count(w) ? emp[w] : 0.0));
      for (const auto& [w, p] : emp) {
        if (!exact.count(w)) tv += p;
      }
      worst = std::max(worst, 0.5 * tv);
    }
    MESSAGE("worst total variation " << worst);
    CHECK(worst < 0.03);
  }

  TEST_CASE("z score") {
    HeuristicStats st{"b", 3.0, 1.5, 1000};
    CHECK(z_score(3, st) == 0.0);
    CHECK(z_score(0, HeuristicStats{"b", 1.5, 1.5, 10}) == -1.0);
    HeuristicStats degenerate{"s", 0.0, 0.0, 1000};
    CHECK(z_score(0, degenerate) == 0.0);
    CHECK(z_score(1, degenerate) > 1e8);
  }

  TEST_CASE("heuristic table is order independent") {
    BoardDataset a, b;
    a.add({"x", Board::parse("1100/0000/0000/0000"), 1.0});
    a.add({"y", Board::parse("1000/1000/1000/0000"), 1.0});
    a.add({"w", Board(4), 1.0});
    b.add({"y", Board::parse("1000/1000/1000/0000"), 1.0});
    b.add({"x", Board::parse("1100/0000/0000/0000"), 1.0});
    auto ta = heuristic_table(a, 200, 5);
    auto tb = heuristic_table(b, 200, 5);
    CHECK(ta.size() == 2);
    CHECK(ta.at("x").mean == tb.at("x").mean);
    CHECK(ta.at("y").std == tb.at("y").std);
    CHECK(HeuristicStats::from_json(ta.at("x").to_json()).mean == ta.at("x").mean);
  }

  TEST_CASE("traces round trip and replay") {
    Board b = Board::parse("0110/0000/0000/1000");
    Rng rng(8);
    const std::uint64_t seed = 77;
    EnvState s = reset(b, seed);
    EpisodeTrace t{"b1", seed, {}, {}, 0, 0.0};
    while (!s.done) {
      const int a = static_cast<int>(uniform_index(rng, 16));
      t.actions.push_back(a);
      t.rewards.push_back(step(s, a).reward);
    }
    t.whites = s.whites_revealed;
    auto st = heuristic_stats(b, 300, 1);
    t.z = z_score(t.whites, st);
    auto path = std::filesystem::temp_directory_path() / "gridmind-traces.jsonl";
    save_traces(path, {t, t});
    auto back = load_traces(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].actions == t.actions);
    CHECK(back[0].rewards == t.rewards);
    CHECK(back[0].z == t.z);
    EnvState r = replay(b, back[0].seed, back[0].actions);
    CHECK(r.done);
    CHECK(r.whites_revealed == t.whites);
    CHECK(z_score(r.whites_revealed, st) == t.z);
    std::filesystem::remove(path);
  }
}
