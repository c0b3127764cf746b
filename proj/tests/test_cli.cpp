#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "gridmind/board.hpp"
#include "gridmind/common.hpp"

using namespace gridmind;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "gridmind-cli-test";

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + GRIDMIND_CLI_PATH + "\" " + args +
                          " > \"" + (kRoot / "stdout.txt").string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string p(const char* name) { return "\"" + (kRoot / name).string() + "\""; }

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
  ~Fresh() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-priors writes data and a manifest, and reruns identically") {
    Fresh f;
    REQUIRE(cli("gen-priors --count 50 --n 4 --seed 3 --out " + p("a.jsonl")) == 0);
    REQUIRE(cli("gen-priors --count 50 --n 4 --seed 3 --out " + p("b.jsonl")) == 0);
    CHECK(read_text(kRoot / "a.jsonl") == read_text(kRoot / "b.jsonl"));
    CHECK(BoardDataset::load_jsonl(kRoot / "a.jsonl").total_weight() == 50.0);
    const Json m = read_json(kRoot / "a.jsonl.manifest.json");
    CHECK(m["command"] == "gen-priors");
    CHECK(m["seeds"]["gen-priors"] == 3);
    CHECK(m["outputs"].size() == 1);
  }

  TEST_CASE("GRIDMIND_SEED overrides the seed flag") {
    Fresh f;
    setenv("GRIDMIND_SEED", "11", 1);
    REQUIRE(cli("gen-priors --count 40 --seed 3 --out " + p("env.jsonl")) == 0);
    unsetenv("GRIDMIND_SEED");
    REQUIRE(cli("gen-priors --count 40 --seed 11 --out " + p("flag.jsonl")) == 0);
    CHECK(read_text(kRoot / "env.jsonl") == read_text(kRoot / "flag.jsonl"));
    CHECK(read_json(kRoot / "env.jsonl.manifest.json")["seeds"]["gen-priors"] == 11);
  }

  TEST_CASE("validation failures exit 1") {
    Fresh f;
    CHECK(cli("gen-priors --count 0 --out " + p("x.jsonl")) == 1);
    CHECK(cli("gen-priors") == 1);
    CHECK(cli("no-such-command") == 1);
    CHECK(cli("train-conditional --data " + p("missing.jsonl") + " --out " + p("m.ckpt")) == 1);
    write_text(kRoot / "bad.jsonl", "{\"id\": \"a\", \"board\": \"12/00\", \"weight\": 1}\n");
    CHECK(cli("train-conditional --data " + p("bad.jsonl") + " --out " + p("m.ckpt")) == 1);
    CHECK(read_text(kRoot / "stdout.txt").find("error:") != std::string::npos);
  }

  TEST_CASE("stages chain end to end") {
    Fresh f;
    REQUIRE(cli("gen-priors --count 40 --n 3 --seed 1 --out " + p("priors.jsonl")) == 0);
    REQUIRE(cli("train-conditional --data " + p("priors.jsonl") +
                " --epochs 3 --accuracy-trials 50 --out " + p("cond.ckpt")) == 0);
    REQUIRE(cli("gibbs --model " + p("cond.ckpt") +
                " --chains 4 --sweeps 20 --burn-in 5 --thin 5 --out " + p("control.jsonl")) == 0);
    CHECK(BoardDataset::load_jsonl(kRoot / "control.jsonl").total_weight() == 12.0);
    REQUIRE(cli("describe-synth --data " + p("priors.jsonl") + " --per-board 2 --out " +
                p("desc.jsonl")) == 0);
    REQUIRE(cli("embed --provider synthetic-featurized --descriptions " + p("desc.jsonl") +
                " --dim 16 --out " + p("emb.jsonl")) == 0);
    REQUIRE(cli("embed --provider board-autoencoder-target --data " + p("priors.jsonl") +
                " --out " + p("ae.jsonl")) == 0);
    CHECK(cli("embed --provider program-recognition --out " + p("x.jsonl")) == 1);
    REQUIRE(cli("train-agent --data " + p("priors.jsonl") + " --embeddings " + p("emb.jsonl") +
                " --episodes 32 --seed 2 --curve " + p("curve.csv") + " --out " + p("agent.ckpt")) ==
            0);
    CHECK(read_text(kRoot / "curve.csv").rfind("episode,mean_return", 0) == 0);
    REQUIRE(cli("eval-agent --checkpoint " + p("agent.ckpt") + " --test " + p("control.jsonl") +
                " --episodes 2 --heuristic-runs 30 --traces-dir " + p("traces") + " --out " +
                p("eval.json")) == 0);
    const Json rep = read_json(kRoot / "eval.json");
    CHECK(rep["distributions"].contains("control"));
    CHECK(fs::exists(kRoot / "traces" / "control-traces.jsonl"));
  }
}
