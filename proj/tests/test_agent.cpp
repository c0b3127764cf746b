#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "agent_fixture.hpp"
#include "gridmind/agent.hpp"
#include "gridmind/priors.hpp"

using namespace gridmind;
using namespace gridmind::agent;

namespace {

std::map<std::string, std::vector<double>> grads_of(const LossParts& parts, PolicyNet& net) {
  net.params().zero_grad();
  nn::backward(parts.total);
  std::map<std::string, std::vector<double>> out;
  for (const auto& name : net.params().names()) {
    const auto& g = net.params().get(name).grad();
    out[name].assign(g.data(), g.data() + g.size());
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

BoardDataset rows() {
  BoardDataset ds;
  for (const auto& b : priors::family_boards(priors::RuleFamily::Row, 4)) {
    ds.add({board_id("row-", b), b, 1.0});
  }
  return ds;
}

PPOConfig tiny_config() {
  PPOConfig cfg = PPOConfig::grounding();
  cfg.c_task = 0.0;
  cfg.n_envs = 4;
  cfg.batch_size = 16;
  cfg.n_epochs = 2;
  cfg.episodes = 40;
  cfg.log_every = 10;
  return cfg;
}

}  // namespace

TEST_SUITE("agent") {
  TEST_CASE("presets carry the table values") {
    auto g = PPOConfig::grounding();
    CHECK(g.batch_size == 256);
    CHECK(g.n_steps == 8);
    CHECK(g.gamma == 0.9);
    CHECK(g.lr == 0.000376021);
    CHECK(g.ent_coef == 1.45674e-6);
    CHECK(g.clip == 0.3);
    CHECK(g.n_epochs == 5);
    CHECK(g.gae_lambda == 0.95);
    CHECK(g.max_grad_norm == 0.6);
    CHECK(g.vf_coef == 0.016291309);
    CHECK(g.activation == nn::Activation::Tanh);
    CHECK(g.c_task == 0.494866282);
    auto n = PPOConfig::preset("no-grounding");
    CHECK(n.n_steps == 2048);
    CHECK(n.batch_size == 16);
    CHECK(n.c_task == 0.0);
    CHECK_THROWS_AS(PPOConfig::preset("fast"), ValidationError);
  }

  TEST_CASE("config json round trip and validation") {
    auto g = PPOConfig::grounding();
    g.episodes = 123;
    auto back = PPOConfig::from_json(g.to_json());
    CHECK(back.to_json() == g.to_json());
    auto from_preset = PPOConfig::from_json({{"preset", "no-grounding"}, {"episodes", 7}});
    CHECK(from_preset.n_steps == 2048);
    CHECK(from_preset.episodes == 7);
    PPOConfig bad = g;
    bad.clip = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = g;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(PPOConfig::from_json({{"gae_lambda", 1.5}}), ValidationError);
  }

  TEST_CASE("act: uniform logits, greedy argmax, determinism") {
    PolicyNet net(4, nn::Activation::Tanh, 0, 3);
    net.params().get("policy.w").mutable_value().fill(0.0);
    net.params().get("policy.b").mutable_value().fill(0.0);
    env::EnvState st = env::reset(Board::parse("1100/0000/0000/0000"), 0);
    auto r = act(net, st.observe(), -1, 0.0, Hidden::zeros(), nullptr, true);
    for (double p : r.probs) CHECK(p == doctest::Approx(1.0 / 16.0));
    CHECK(r.log_prob == doctest::Approx(std::log(1.0 / 16.0)));

    net.params().get("policy.b").mutable_value()[0] = 10.0;
    CHECK(act(net, st.observe(), -1, 0.0, Hidden::zeros(), nullptr, true).action == 0);

    PolicyNet other(4, nn::Activation::Tanh, 0, 3);
    Rng a(5), b(5);
    auto x = act(other, st.observe(), 2, -1.0, Hidden::zeros(), &a);
    auto y = act(other, st.observe(), 2, -1.0, Hidden::zeros(), &b);
    CHECK(x.action == y.action);
    CHECK(x.log_prob == y.log_prob);
    CHECK(x.value == y.value);
    CHECK(x.hidden.h == y.hidden.h);
  }

  TEST_CASE("act never picks a forbidden tile") {
    PolicyNet net(4, nn::Activation::Tanh, 0, 8);
    env::EnvState st = env::reset(Board::parse("1111/0000/0000/0000"), 2);
    Rng rng(1);
    for (int k = 0; k < 50; ++k) {
      auto r = act(net, st.observe(), -1, 0.0, Hidden::zeros(), &rng, false, &st.revealed);
      CHECK(!st.revealed[r.action]);
    }
  }

  TEST_CASE("gae hand cases") {
    auto one = compute_gae({2.5}, {0.0, 0.0}, {0}, 1.0, 1.0);
    CHECK(one.advantages[0] == doctest::Approx(2.5));
    auto flat = compute_gae({0, 0, 0}, {4, 4, 4, 4}, {0, 0, 0}, 1.0, 0.95);
    for (double a : flat.advantages) CHECK(a == doctest::Approx(0.0));
    auto two = compute_gae({1, 1}, {0, 0, 0}, {0, 0}, 0.9, 0.95);
    CHECK(two.advantages[0] == doctest::Approx(1.855));
    CHECK(two.advantages[1] == doctest::Approx(1.0));
    CHECK(two.returns[0] == doctest::Approx(1.855));
    auto term = compute_gae({1, 1}, {0, 0, 5}, {1, 0}, 0.9, 0.95);
    CHECK(term.advantages[0] == doctest::Approx(1.0));
    CHECK(term.advantages[1] == doctest::Approx(1.0 + 0.9 * 5));
  }

  TEST_CASE("advantage normalization") {
    std::vector<double> x = {1.0, -2.0, 0.5, 4.0, 3.25, -0.75};
    auto z = normalize(x);
    const double m = std::accumulate(z.begin(), z.end(), 0.0) / z.size();
    double v = 0.0;
    for (double a : z) v += (a - m) * (a - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(std::sqrt(v / z.size()) - 1.0) < 1e-9);
    for (double a : normalize({2.0, 2.0})) CHECK(a == 0.0);
  }

  TEST_CASE("chunking covers the buffer") {
    RolloutBuffer buf;
    buf.reset(32, 8, 48, 16, 0);
    auto chunks = make_chunks(buf, 256);
    CHECK(chunks.size() == 32);
    CHECK(chunks[0].length == 8);
    buf.reset(32, 2048, 48, 16, 0);
    chunks = make_chunks(buf, 16);
    CHECK(chunks[0].length == 1);
    CHECK(chunks.size() == 32 * 2048);
    buf.reset(4, 6, 48, 16, 0);
    CHECK(make_chunks(buf, 16)[0].length == 3);
  }

  TEST_CASE("clipped surrogate at ratio two") {
    auto toy = fixture::toy_rollout(0, 0.0);
    // Stored log-probs one log(2) below the current policy: every ratio is 2.
    RolloutBuffer ref = toy.buf;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ref.log_prob[i] = toy.buf.log_prob[i] - toy.shifts[i] - std::log(2.0);
    }
    const auto parts = ppo_loss(toy.net, ref, toy.chunks, toy.cfg);
    double expected = 0.0;
    for (double a : normalize(ref.advantages)) expected += std::min(2.0 * a, 1.3 * a);
    expected = -expected / 4.0;
    CHECK(parts.policy == doctest::Approx(expected).epsilon(1e-9));
    CHECK(parts.clip_fraction == 1.0);
    // the clip definition itself
    nn::Var r = nn::constant(nn::Tensor({1}, std::vector<double>{2.0}));
    nn::Var adv = nn::constant(nn::Tensor({1}, std::vector<double>{1.0}));
    nn::Var s = nn::minimum(nn::mul(r, adv), nn::mul(nn::clamp(r, 0.7, 1.3), adv));
    CHECK(s.value()[0] == doctest::Approx(1.3));
  }

  TEST_CASE("zero task coefficient gives the plain objective and gradient") {
    auto toy = fixture::toy_rollout(5, 0.0);
    const auto a = ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg);
    RolloutBuffer stripped = toy.buf;
    stripped.psi_dim = 0;
    stripped.psi.clear();
    const auto b = ppo_loss(toy.net, stripped, toy.chunks, toy.cfg);
    CHECK(a.total.value().item() == b.total.value().item());
    auto ga = grads_of(a, toy.net);
    auto gb = grads_of(b, toy.net);
    for (const auto& [name, g] : ga) CHECK(max_abs_diff(g, gb[name]) == 0.0);
  }

  TEST_CASE("grounding gradient reaches only the encoder and its head") {
    auto toy = fixture::toy_rollout(5, 0.5);
    const auto with_task = ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg);
    CHECK(with_task.grounding > 0.0);
    PPOConfig plain = toy.cfg;
    plain.c_task = 0.0;
    const auto without_task = ppo_loss(toy.net, toy.buf, toy.chunks, plain);
    auto ga = grads_of(with_task, toy.net);
    auto gb = grads_of(without_task, toy.net);
    for (const auto& name : toy.net.policy_value_params()) {
      CHECK(max_abs_diff(ga[name], gb[name]) == 0.0);
    }
    for (const char* name : {"lstm.wx", "lstm.wh", "lstm.b"}) {
      CHECK(max_abs_diff(ga[name], gb[name]) == 0.0);
    }
    for (const auto& name : toy.net.encoder_params()) {
      CHECK(max_abs_diff(ga[name], gb[name]) > 0.0);
    }
    for (const auto& name : toy.net.grounding_params()) {
      CHECK(max_abs_diff(ga[name], gb[name]) > 0.0);
      double norm = 0.0;
      for (double v : gb[name]) norm += std::abs(v);
      CHECK(norm == 0.0);
    }
  }

  TEST_CASE("exact task prediction has zero grounding loss") {
    auto toy = fixture::toy_rollout(5, 0.5);
    toy.net.params().get("ground.fc2.w").mutable_value().fill(0.0);
    toy.net.params().get("ground.fc2.b").mutable_value().fill(0.0);
    std::fill(toy.buf.psi.begin(), toy.buf.psi.end(), 0.0);
    CHECK(ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg).grounding == 0.0);
  }

  TEST_CASE("embedding dim mismatch is rejected") {
    auto toy = fixture::toy_rollout(5, 0.5);
    toy.buf.psi_dim = 4;
    CHECK_THROWS_AS(ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg), ValidationError);
  }

  TEST_CASE("full loss passes a finite-difference check") {
    auto toy = fixture::toy_rollout(5, 0.494866282);
    auto loss = [&] { return ppo_loss(toy.net, toy.buf, toy.chunks, toy.cfg).total; };
    CHECK(nn::grad_check(loss, toy.net.params(), 1e-5, 40, 3) < 1e-4);
  }

  TEST_CASE("training is deterministic and logs a curve") {
    auto cfg = tiny_config();
    auto a = train(rows(), cfg, nullptr, 9);
    auto b = train(rows(), cfg, nullptr, 9);
    CHECK(a.curve_csv() == b.curve_csv());
    CHECK(a.net.params().flat_values() == b.net.params().flat_values());
    CHECK(a.episodes >= cfg.episodes);
    CHECK(a.curve.size() >= 4);
    CHECK(a.curve_csv().rfind("episode,mean_return,policy_loss,value_loss,grounding_mse,entropy", 0) == 0);
  }

  TEST_CASE("grounding needs a covering provider") {
    auto cfg = tiny_config();
    cfg.c_task = 0.5;
    CHECK_THROWS_AS(train(rows(), cfg, nullptr, 1), ValidationError);
    embeddings::EmbeddingProvider partial(embeddings::ProviderKind::BoardAutoencoder, 16);
    partial.add(rows().at(0).id, std::vector<double>(16, 0.0));
    CHECK_THROWS_AS(train(rows(), cfg, &partial, 1), ValidationError);
    auto full = embeddings::autoencoder_provider(rows());
    auto res = train(rows(), cfg, &full, 1);
    CHECK(!res.grounding_history.empty());
  }

  TEST_CASE("oracle policy never loses to the heuristic") {
    BoardDataset test = rows();
    test.add({"scatter", Board::parse("1001/0000/0100/0001"), 1.0});
    Policy oracle = [](const env::EnvState& st, Rng&) {
      for (int i = 0; i < st.underlying.area(); ++i) {
        if (st.underlying.red(i) && !st.revealed[i]) return i;
      }
      return 0;
    };
    auto rep = evaluate_policy(oracle, test, 5, 3);
    for (const auto& b : rep.boards) {
      CHECK(b.mean_whites == 0.0);
      CHECK(b.mean_z <= 0.0);
    }
  }

  TEST_CASE("random policy on a mostly white board is worse than the heuristic") {
    BoardDataset test;
    test.add({"sparse", Board::parse("1100/0000/0000/0000"), 1.0});
    Policy random = [](const env::EnvState& st, Rng& rng) {
      for (;;) {
        const int a = static_cast<int>(uniform_index(rng, 16));
        if (!st.revealed[a]) return a;
      }
    };
    auto rep = evaluate_policy(random, test, 200, 4);
    CHECK(rep.mean_z > 0.0);
    CHECK(rep.ci_low <= rep.mean_z);
    CHECK(rep.mean_z <= rep.ci_high);
  }

  TEST_CASE("evaluation is reproducible and consistent with replay") {
    PolicyNet net(4, nn::Activation::Tanh, 0, 12);
    auto table = env::heuristic_table(rows(), 300, 0);
    auto a = evaluate(net, rows(), 3, 21, &table);
    auto b = evaluate(net, rows(), 3, 21, &table);
    CHECK(a.to_json() == b.to_json());
    const auto data = rows();
    for (const auto& tr : a.traces) {
      const auto* e = data.find(tr.board_id);
      REQUIRE(e);
      auto st = env::replay(e->board, tr.seed, tr.actions);
      CHECK(st.whites_revealed == tr.whites);
      CHECK(env::z_score(st.whites_revealed, table.at(tr.board_id)) == tr.z);
    }
  }

  TEST_CASE("checkpoint round trip") {
    PolicyNet net(4, nn::Activation::Relu, 7, 2);
    auto path = std::filesystem::temp_directory_path() / "gridmind-policy.ckpt";
    net.save(path, {{"note", "x"}});
    auto back = PolicyNet::load(path);
    CHECK(back.grounding_dim() == 7);
    CHECK(back.activation() == nn::Activation::Relu);
    CHECK(back.params().flat_values() == net.params().flat_values());
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
  }
}
