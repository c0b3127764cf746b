#include "gridmind/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gridmind/analysis.hpp"

namespace gridmind::agent {

// --- configuration -------------------------------------------------------------

PPOConfig PPOConfig::grounding() { return PPOConfig{}; }

PPOConfig PPOConfig::no_grounding() {
  PPOConfig c;
  c.batch_size = 16;
  c.n_steps = 2048;
  c.gamma = 0.9;
  c.lr = 0.000516501;
  c.ent_coef = 1.3907e-5;
  c.clip = 0.3;
  c.n_epochs = 10;
  c.gae_lambda = 0.8;
  c.max_grad_norm = 2.0;
  c.vf_coef = 0.000914363;
  c.activation = nn::Activation::Relu;
  c.c_task = 0.0;
  return c;
}

PPOConfig PPOConfig::preset(const std::string& name) {
  if (name == "grounding") return grounding();
  if (name == "no-grounding") return no_grounding();
  throw ValidationError("unknown PPO preset '" + name + "'");
}

void PPOConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ValidationError("clip must be in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) {
    throw ValidationError("gae_lambda must be in (0, 1]");
  }
  if (batch_size == 0 || n_steps == 0 || n_envs == 0) {
    throw ValidationError("batch_size, n_steps and n_envs must be positive");
  }
  if (n_epochs < 1) throw ValidationError("n_epochs must be positive");
  if (lr <= 0.0) throw ValidationError("lr must be positive");
  if (episodes < 1) throw ValidationError("episodes must be positive");
  if (log_every < 1) throw ValidationError("log_every must be positive");
  if (c_task < 0.0 || vf_coef < 0.0 || ent_coef < 0.0) {
    throw ValidationError("loss coefficients must be nonnegative");
  }
  if (max_grad_norm <= 0.0) throw ValidationError("max_grad_norm must be positive");
}

Json PPOConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"n_steps", n_steps},
          {"n_envs", n_envs},
          {"gamma", gamma},
          {"lr", lr},
          {"ent_coef", ent_coef},
          {"clip", clip},
          {"n_epochs", n_epochs},
          {"gae_lambda", gae_lambda},
          {"max_grad_norm", max_grad_norm},
          {"vf_coef", vf_coef},
          {"activation", nn::to_string(activation)},
          {"c_task", c_task},
          {"episodes", episodes},
          {"log_every", log_every},
          {"step_cap", env.step_cap},
          {"final_red_bonus_additive", env.final_red_bonus_additive}};
}

PPOConfig PPOConfig::from_json(const Json& j) {
  PPOConfig c = j.contains("preset") ? preset(j.at("preset").get<std::string>())
                                     : PPOConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("batch_size", c.batch_size);
  get("n_steps", c.n_steps);
  get("n_envs", c.n_envs);
  get("gamma", c.gamma);
  get("lr", c.lr);
  get("ent_coef", c.ent_coef);
  get("clip", c.clip);
  get("n_epochs", c.n_epochs);
  get("gae_lambda", c.gae_lambda);
  get("max_grad_norm", c.max_grad_norm);
  get("vf_coef", c.vf_coef);
  get("c_task", c.c_task);
  get("episodes", c.episodes);
  get("log_every", c.log_every);
  get("step_cap", c.env.step_cap);
  get("final_red_bonus_additive", c.env.final_red_bonus_additive);
  if (j.contains("activation")) {
    c.activation = nn::parse_activation(j.at("activation").get<std::string>());
  }
  c.validate();
  return c;
}

// --- network -------------------------------------------------------------------

PolicyNet::PolicyNet(int n, nn::Activation act, std::size_t grounding_dim,
                     std::uint64_t seed)
    : n_(n), act_(act), grounding_dim_(grounding_dim) {
  if (n < 2 || n > Board::kMaxSide) throw ValidationError("bad board side");
  Rng rng(seed);
  const auto area = static_cast<std::size_t>(n * n);
  conv_ = nn::Conv2d::create(ps_, "enc.conv", 3, kChannels, 3, rng);
  enc_ = nn::Dense::create(ps_, "enc.fc", kChannels * area, kEncoder, rng);
  lstm_ = nn::LstmCell::create(ps_, "lstm", kEncoder + area + 1, kLstm, rng);
  pi_ = nn::Dense::create(ps_, "policy", kLstm, area, rng);
  v_ = nn::Dense::create(ps_, "value", kLstm, 1, rng);
  if (grounding_dim_ > 0) {
    g1_ = nn::Dense::create(ps_, "ground.fc1", kEncoder, kGroundingHidden, rng);
    g2_ = nn::Dense::create(ps_, "ground.fc2", kGroundingHidden, grounding_dim_, rng);
  }
}

PolicyNet::Output PolicyNet::step(const nn::Var& obs, const nn::Var& prev_action,
                                  const nn::Var& prev_reward, const nn::Var& h,
                                  const nn::Var& c) const {
  const std::size_t B = obs.shape().at(0);
  const auto n = static_cast<std::size_t>(n_);
  nn::Var x = nn::reshape(obs, {B, 3, n, n});
  x = nn::activate(conv_(x), act_);
  x = nn::reshape(x, {B, kChannels * n * n});
  nn::Var enc = nn::activate(enc_(x), act_);
  auto [h2, c2] = lstm_(nn::concat_cols({enc, prev_action, prev_reward}), h, c);
  Output out;
  out.logits = pi_(h2);
  out.value = v_(h2);
  if (grounding_dim_ > 0) out.psi_hat = g2_(nn::activate(g1_(enc), act_));
  out.h = h2;
  out.c = c2;
  return out;
}

std::vector<std::string> PolicyNet::encoder_params() const {
  return {"enc.conv.k", "enc.conv.b", "enc.fc.w", "enc.fc.b"};
}

std::vector<std::string> PolicyNet::grounding_params() const {
  if (grounding_dim_ == 0) return {};
  return {"ground.fc1.w", "ground.fc1.b", "ground.fc2.w", "ground.fc2.b"};
}

std::vector<std::string> PolicyNet::policy_value_params() const {
  return {"policy.w", "policy.b", "value.w", "value.b"};
}

void PolicyNet::save(const std::filesystem::path& path, const Json& extra) const {
  ps_.save(path, {{"kind", "policy"},
                  {"n", n_},
                  {"activation", nn::to_string(act_)},
                  {"grounding_dim", grounding_dim_},
                  {"lstm_units", kLstm},
                  {"extra", extra}});
}

PolicyNet PolicyNet::load(const std::filesystem::path& path) {
  const Json meta = nn::ParamStore::read_manifest(path).at("meta");
  if (meta.value("kind", "") != "policy") {
    throw ValidationError(path.string() + " is not a policy checkpoint");
  }
  PolicyNet net(meta.at("n").get<int>(),
                nn::parse_activation(meta.at("activation").get<std::string>()),
                meta.at("grounding_dim").get<std::size_t>(), 0);
  net.ps_.load(path);
  return net;
}

// --- acting --------------------------------------------------------------------

namespace {

void one_hot_row(double* row, int action) {
  if (action >= 0) row[action] = 1.0;
}

std::vector<double> softmax_row(const double* logits, std::size_t n) {
  const double m = *std::max_element(logits, logits + n);
  std::vector<double> p(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (p[i] = std::exp(logits[i] - m));
  for (double& x : p) x /= s;
  return p;
}

int sample_from(const std::vector<double>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace

ActResult act(const PolicyNet& net, const env::Observation& obs, int prev_action,
              double prev_reward, const Hidden& hidden, Rng* rng, bool greedy,
              const std::vector<std::uint8_t>* forbidden) {
  const std::size_t A = net.actions();
  if (obs.tiles.size() != A) throw ValidationError("observation size mismatch");
  nn::Tensor pa({1, A});
  one_hot_row(pa.data(), prev_action);
  const auto out = net.step(
      nn::constant(nn::Tensor({1, 3 * A}, obs.channels())), nn::constant(std::move(pa)),
      nn::constant(nn::Tensor({1, 1}, std::vector<double>{prev_reward})),
      nn::constant(nn::Tensor({1, PolicyNet::kLstm}, hidden.h)),
      nn::constant(nn::Tensor({1, PolicyNet::kLstm}, hidden.c)));
  std::vector<double> logits(out.logits.value().data(), out.logits.value().data() + A);
  const std::vector<double> full = softmax_row(logits.data(), A);
  if (forbidden) {
    for (std::size_t i = 0; i < A; ++i) {
      if ((*forbidden)[i]) logits[i] = -std::numeric_limits<double>::infinity();
    }
  }
  const std::vector<double> p = softmax_row(logits.data(), A);
  ActResult r;
  if (greedy) {
    r.action = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  } else {
    if (!rng) throw std::invalid_argument("act: sampling needs an rng");
    r.action = sample_from(p, *rng);
  }
  r.log_prob = std::log(full[static_cast<std::size_t>(r.action)]);
  r.value = out.value.value()[0];
  r.hidden.h.assign(out.h.value().data(), out.h.value().data() + PolicyNet::kLstm);
  r.hidden.c.assign(out.c.value().data(), out.c.value().data() + PolicyNet::kLstm);
  r.probs = p;
  return r;
}

// --- advantages ----------------------------------------------------------------

Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                const std::vector<std::uint8_t>& dones, double gamma, double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T) {
    throw std::invalid_argument("compute_gae: misaligned inputs");
  }
  Gae g;
  g.advantages.assign(T, 0.0);
  g.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    g.advantages[t] = next_adv;
    g.returns[t] = next_adv + values[t];
  }
  return g;
}

std::vector<double> normalize(const std::vector<double>& x) {
  if (x.empty()) return {};
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  std::vector<double> out(x.size(), 0.0);
  if (sd > 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - m) / sd;
  }
  return out;
}

void RolloutBuffer::reset(std::size_t envs, std::size_t steps, std::size_t od,
                          std::size_t acts, std::size_t pd) {
  n_envs = envs;
  n_steps = steps;
  obs_dim = od;
  actions = acts;
  psi_dim = pd;
  const std::size_t N = envs * steps;
  obs.assign(N * od, 0.0);
  prev_action.assign(N, -1);
  prev_reward.assign(N, 0.0);
  h.assign(N * PolicyNet::kLstm, 0.0);
  c.assign(N * PolicyNet::kLstm, 0.0);
  episode_start.assign(N, 0);
  action.assign(N, 0);
  log_prob.assign(N, 0.0);
  value.assign(N, 0.0);
  reward.assign(N, 0.0);
  done.assign(N, 0);
  psi.assign(N * pd, 0.0);
  advantages.assign(N, 0.0);
  returns.assign(N, 0.0);
}

void RolloutBuffer::finish(const std::vector<double>& last_values, double gamma,
                           double lambda) {
  if (last_values.size() != n_envs) throw std::invalid_argument("finish: bad bootstrap");
  std::vector<double> r(n_steps), v(n_steps + 1);
  std::vector<std::uint8_t> d(n_steps);
  for (std::size_t e = 0; e < n_envs; ++e) {
    for (std::size_t t = 0; t < n_steps; ++t) {
      const std::size_t i = t * n_envs + e;
      r[t] = reward[i];
      v[t] = value[i];
      d[t] = done[i];
    }
    v[n_steps] = last_values[e];
    const Gae g = compute_gae(r, v, d, gamma, lambda);
    for (std::size_t t = 0; t < n_steps; ++t) {
      advantages[t * n_envs + e] = g.advantages[t];
      returns[t * n_envs + e] = g.returns[t];
    }
  }
}

std::vector<Chunk> make_chunks(const RolloutBuffer& buf, std::size_t batch_size) {
  const std::size_t want = std::max<std::size_t>(1, batch_size / buf.n_envs);
  std::size_t len = std::min(want, buf.n_steps);
  while (buf.n_steps % len != 0) --len;
  std::vector<Chunk> out;
  for (std::size_t e = 0; e < buf.n_envs; ++e) {
    for (std::size_t s = 0; s < buf.n_steps; s += len) out.push_back({e, s, len});
  }
  return out;
}

// --- loss ------------------------------------------------------------------------

LossParts ppo_loss(const PolicyNet& net, const RolloutBuffer& buf,
                   const std::vector<Chunk>& chunks, const PPOConfig& cfg) {
  if (chunks.empty()) throw std::invalid_argument("ppo_loss: no chunks");
  const std::size_t B = chunks.size();
  const std::size_t L = chunks.front().length;
  for (const auto& ch : chunks) {
    if (ch.length != L) throw std::invalid_argument("ppo_loss: ragged chunks");
  }
  const std::size_t E = buf.n_envs, A = buf.actions, H = PolicyNet::kLstm;
  const bool ground = net.grounding_dim() > 0 && buf.psi_dim > 0;
  if (ground && net.grounding_dim() != buf.psi_dim) {
    throw ValidationError("task embedding dim " + std::to_string(buf.psi_dim) +
                          " does not match grounding head " +
                          std::to_string(net.grounding_dim()));
  }
  auto index = [&](std::size_t b, std::size_t k) {
    return (chunks[b].start + k) * E + chunks[b].env;
  };

  std::vector<double> adv;
  adv.reserve(B * L);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t b = 0; b < B; ++b) adv.push_back(buf.advantages[index(b, k)]);
  }
  adv = normalize(adv);

  nn::Tensor h0({B, H}), c0({B, H});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t i = index(b, 0);
    std::copy_n(buf.h.data() + i * H, H, h0.data() + b * H);
    std::copy_n(buf.c.data() + i * H, H, c0.data() + b * H);
  }
  nn::Var h = nn::constant(std::move(h0)), c = nn::constant(std::move(c0));

  nn::Var policy_sum, value_sum, entropy_sum, ground_sum;
  auto accumulate = [](nn::Var& acc, const nn::Var& x) {
    acc = acc.defined() ? nn::add(acc, x) : x;
  };
  double clipped = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    if (k > 0) {
      nn::Tensor keep({B, H}, 1.0);
      bool any = false;
      for (std::size_t b = 0; b < B; ++b) {
        if (buf.episode_start[index(b, k)]) {
          any = true;
          std::fill_n(keep.data() + b * H, H, 0.0);
        }
      }
      if (any) {
        const nn::Var mask = nn::constant(std::move(keep));
        h = nn::mul(h, mask);
        c = nn::mul(c, mask);
      }
    }
    nn::Tensor obs({B, buf.obs_dim}), pa({B, A}), pr({B, 1}), ret({B, 1});
    nn::Tensor old_lp({B}), a_k({B});
    std::vector<int> actions(B);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t i = index(b, k);
      std::copy_n(buf.obs.data() + i * buf.obs_dim, buf.obs_dim, obs.data() + b * buf.obs_dim);
      one_hot_row(pa.data() + b * A, buf.prev_action[i]);
      pr[b] = buf.prev_reward[i];
      ret[b] = buf.returns[i];
      old_lp[b] = buf.log_prob[i];
      a_k[b] = adv[k * B + b];
      actions[b] = buf.action[i];
    }
    const auto out = net.step(nn::constant(std::move(obs)), nn::constant(std::move(pa)),
                              nn::constant(std::move(pr)), h, c);
    h = out.h;
    c = out.c;

    const nn::Var logp = nn::pick(nn::log_softmax(out.logits), actions);
    const nn::Var ratio = nn::exp(nn::sub(logp, nn::constant(old_lp)));
    const nn::Var adv_k = nn::constant(a_k);
    const nn::Var s1 = nn::mul(ratio, adv_k);
    const nn::Var s2 = nn::mul(nn::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv_k);
    accumulate(policy_sum, nn::sum(nn::minimum(s1, s2)));
    for (std::size_t b = 0; b < B; ++b) {
      if (std::abs(ratio.value()[b] - 1.0) > cfg.clip) clipped += 1.0;
    }
    accumulate(value_sum, nn::mse_loss(out.value, nn::constant(std::move(ret))));
    accumulate(entropy_sum, nn::mean(nn::entropy(out.logits)));
    if (ground) {
      nn::Tensor target({B, buf.psi_dim});
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(buf.psi.data() + index(b, k) * buf.psi_dim, buf.psi_dim,
                    target.data() + b * buf.psi_dim);
      }
      accumulate(ground_sum, nn::mse_loss(out.psi_hat, nn::constant(std::move(target))));
    }
  }
  const double inv_l = 1.0 / static_cast<double>(L);
  const nn::Var policy = nn::scale(policy_sum, -1.0 / static_cast<double>(B * L));
  const nn::Var value = nn::scale(value_sum, inv_l);
  const nn::Var entropy = nn::scale(entropy_sum, inv_l);
  nn::Var total = nn::add(policy, nn::scale(value, cfg.vf_coef));
  total = nn::sub(total, nn::scale(entropy, cfg.ent_coef));
  LossParts parts;
  if (ground) {
    const nn::Var g = nn::scale(ground_sum, inv_l);
    total = nn::add(total, nn::scale(g, cfg.c_task));
    parts.grounding = g.value().item();
  }
  parts.total = total;
  parts.policy = policy.value().item();
  parts.value = value.value().item();
  parts.entropy = entropy.value().item();
  parts.clip_fraction = clipped / static_cast<double>(B * L);
  return parts;
}

UpdateStats ppo_update(PolicyNet& net, const RolloutBuffer& buf, const PPOConfig& cfg,
                       double lr, Rng& rng) {
  std::vector<Chunk> chunks = make_chunks(buf, cfg.batch_size);
  const std::size_t per_batch =
      std::max<std::size_t>(1, cfg.batch_size / chunks.front().length);
  UpdateStats st;
  int count = 0;
  for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
    std::shuffle(chunks.begin(), chunks.end(), rng);
    for (std::size_t s = 0; s < chunks.size(); s += per_batch) {
      const std::vector<Chunk> mb(chunks.begin() + static_cast<long>(s),
                                  chunks.begin() + static_cast<long>(
                                      std::min(chunks.size(), s + per_batch)));
      const LossParts parts = ppo_loss(net, buf, mb, cfg);
      net.params().zero_grad();
      nn::backward(parts.total);
      st.grad_norm += net.params().clip_grad_norm(cfg.max_grad_norm);
      if (lr > 0.0) net.params().adam_step(lr);
      st.policy += parts.policy;
      st.value += parts.value;
      st.entropy += parts.entropy;
      st.grounding += parts.grounding;
      ++count;
    }
  }
  st.policy /= count;
  st.value /= count;
  st.entropy /= count;
  st.grounding /= count;
  st.grad_norm /= count;
  return st;
}

// --- training --------------------------------------------------------------------

std::string TrainResult::curve_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "episode,mean_return,policy_loss,value_loss,grounding_mse,entropy\n";
  for (const auto& r : curve) {
    out << r.episode << ',' << r.mean_return << ',' << r.policy_loss << ','
        << r.value_loss << ',' << r.grounding_mse << ',' << r.entropy << '\n';
  }
  return out.str();
}

namespace {

struct Slot {
  env::EnvState state;
  std::size_t entry = 0;
  int prev_action = -1;
  double prev_reward = 0.0;
  std::vector<double> h, c;
  std::vector<double> psi;
  bool fresh = true;
  double ret = 0.0;
};

}  // namespace

TrainResult train(const BoardDataset& distribution, const PPOConfig& cfg,
                  const embeddings::EmbeddingProvider* provider, std::uint64_t seed,
                  const std::function<void(const CurveRow&)>& on_log) {
  cfg.validate();
  const BoardDataset boards = distribution.playable();
  if (boards.empty() || boards.total_weight() <= 0.0) {
    throw ValidationError("training distribution has no playable boards");
  }
  const int n = boards.at(0).board.n();
  for (const auto& e : boards.entries()) {
    if (e.board.n() != n) throw ValidationError("training boards must share a size");
  }
  if (cfg.c_task > 0.0 && !provider) {
    throw ValidationError("grounding (c_task > 0) needs an embedding provider");
  }
  if (provider) {
    for (const auto& e : boards.entries()) {
      if (!provider->contains(e.id)) {
        throw ValidationError("embedding provider missing board id '" + e.id + "'");
      }
    }
  }
  const std::size_t psi_dim = provider ? provider->dim() : 0;
  TrainResult res{PolicyNet(n, cfg.activation, psi_dim, derive_seed(seed, 1)), {}, {}, 0, 0};
  PolicyNet& net = res.net;

  Rng env_rng(derive_seed(seed, 2));
  Rng act_rng(derive_seed(seed, 3));
  Rng upd_rng(derive_seed(seed, 4));
  const std::size_t E = cfg.n_envs, T = cfg.n_steps;
  const std::size_t A = static_cast<std::size_t>(n * n), H = PolicyNet::kLstm;

  long episodes = 0;
  double window_return = 0.0;
  long window_count = 0;
  UpdateStats window_stats;
  long window_updates = 0;
  long next_log = cfg.log_every;

  auto begin_episode = [&](Slot& s) {
    for (;;) {
      s.entry = boards.sample_index(env_rng);
      s.state = env::reset(boards.at(s.entry).board, env_rng);
      if (!s.state.done) break;
      // Single-red boards finish at reset with nothing to decide.
      ++episodes;
      window_count += 1;
      if (episodes >= cfg.episodes) break;
    }
    s.prev_action = -1;
    s.prev_reward = 0.0;
    s.h.assign(H, 0.0);
    s.c.assign(H, 0.0);
    if (provider) s.psi = provider->query(boards.at(s.entry).id, env_rng);
    s.fresh = true;
    s.ret = 0.0;
  };

  std::vector<Slot> slots(E);
  for (auto& s : slots) begin_episode(s);

  auto forward_slots = [&]() {
    nn::Tensor obs({E, 3 * A}), pa({E, A}), pr({E, 1}), h({E, H}), c({E, H});
    for (std::size_t e = 0; e < E; ++e) {
      const auto ch = slots[e].state.observe().channels();
      std::copy(ch.begin(), ch.end(), obs.data() + e * 3 * A);
      one_hot_row(pa.data() + e * A, slots[e].prev_action);
      pr[e] = slots[e].prev_reward;
      std::copy_n(slots[e].h.data(), H, h.data() + e * H);
      std::copy_n(slots[e].c.data(), H, c.data() + e * H);
    }
    return net.step(nn::constant(std::move(obs)), nn::constant(std::move(pa)),
                    nn::constant(std::move(pr)), nn::constant(std::move(h)),
                    nn::constant(std::move(c)));
  };

  RolloutBuffer buf;
  while (episodes < cfg.episodes) {
    buf.reset(E, T, 3 * A, A, psi_dim);
    for (std::size_t t = 0; t < T; ++t) {
      const auto out = forward_slots();
      for (std::size_t e = 0; e < E; ++e) {
        Slot& s = slots[e];
        const std::size_t i = t * E + e;
        const auto ch = s.state.observe().channels();
        std::copy(ch.begin(), ch.end(), buf.obs.data() + i * 3 * A);
        buf.prev_action[i] = s.prev_action;
        buf.prev_reward[i] = s.prev_reward;
        std::copy_n(s.h.data(), H, buf.h.data() + i * H);
        std::copy_n(s.c.data(), H, buf.c.data() + i * H);
        buf.episode_start[i] = s.fresh ? 1 : 0;
        if (psi_dim) std::copy_n(s.psi.data(), psi_dim, buf.psi.data() + i * psi_dim);

        const auto p = softmax_row(out.logits.value().data() + e * A, A);
        const int a = sample_from(p, act_rng);
        buf.action[i] = a;
        buf.log_prob[i] = std::log(p[static_cast<std::size_t>(a)]);
        buf.value[i] = out.value.value()[e];
        const auto r = env::step(s.state, a, cfg.env);
        buf.reward[i] = r.reward;
        buf.done[i] = r.done ? 1 : 0;
        s.ret += r.reward;
        s.fresh = false;
        if (r.done) {
          ++episodes;
          window_return += s.ret;
          window_count += 1;
          begin_episode(s);
        } else {
          s.prev_action = a;
          s.prev_reward = r.reward;
          s.h.assign(out.h.value().data() + e * H, out.h.value().data() + (e + 1) * H);
          s.c.assign(out.c.value().data() + e * H, out.c.value().data() + (e + 1) * H);
        }
      }
    }
    const auto boot = forward_slots();
    std::vector<double> last(E);
    for (std::size_t e = 0; e < E; ++e) last[e] = boot.value.value()[e];
    buf.finish(last, cfg.gamma, cfg.gae_lambda);

    const double progress =
        std::min(1.0, static_cast<double>(episodes) / static_cast<double>(cfg.episodes));
    const double lr = cfg.lr * (1.0 - progress);
    const UpdateStats st = ppo_update(net, buf, cfg, lr, upd_rng);
    ++res.updates;
    res.grounding_history.push_back(st.grounding);
    window_stats.policy += st.policy;
    window_stats.value += st.value;
    window_stats.entropy += st.entropy;
    window_stats.grounding += st.grounding;
    ++window_updates;

    while (episodes >= next_log) {
      CurveRow row;
      row.episode = next_log;
      row.mean_return = window_count ? window_return / static_cast<double>(window_count) : 0.0;
      const double u = static_cast<double>(std::max<long>(1, window_updates));
      row.policy_loss = window_stats.policy / u;
      row.value_loss = window_stats.value / u;
      row.grounding_mse = window_stats.grounding / u;
      row.entropy = window_stats.entropy / u;
      res.curve.push_back(row);
      if (on_log) on_log(row);
      window_return = 0.0;
      window_count = 0;
      window_stats = {};
      window_updates = 0;
      next_log += cfg.log_every;
    }
  }
  res.episodes = episodes;
  return res;
}

// --- evaluation --------------------------------------------------------------------

Json EvalReport::to_json() const {
  Json bs = Json::array();
  for (const auto& b : boards) {
    bs.push_back({{"board_id", b.board_id},
                  {"mean_z", b.mean_z},
                  {"mean_whites", b.mean_whites},
                  {"episodes", b.episodes}});
  }
  return {{"boards", bs},
          {"mean_z", mean_z},
          {"ci95", {ci_low, ci_high}},
          {"episodes", episodes}};
}

EvalReport evaluate_policy(const Policy& policy, const BoardDataset& test,
                           int episodes_per_board, std::uint64_t seed,
                           const env::HeuristicTable* table, int heuristic_runs) {
  if (episodes_per_board < 1) throw ValidationError("episodes_per_board must be positive");
  const BoardDataset boards = test.playable();
  if (boards.empty()) throw ValidationError("test set has no playable boards");
  env::HeuristicTable own;
  if (!table) {
    own = env::heuristic_table(boards, heuristic_runs, derive_seed(seed, 7));
    table = &own;
  }
  EvalReport rep;
  std::vector<double> all_z;
  for (const auto& e : boards.entries()) {
    auto it = table->find(e.id);
    if (it == table->end()) {
      throw ValidationError("no heuristic stats for board '" + e.id + "'");
    }
    BoardEval be{e.id, 0.0, 0.0, episodes_per_board};
    for (int k = 0; k < episodes_per_board; ++k) {
      const std::uint64_t s =
          derive_seed(derive_seed(seed, stable_hash(e.id)), static_cast<std::uint64_t>(k));
      Rng rng(s);
      env::EnvState st = env::reset(e.board, s);
      env::EpisodeTrace tr;
      tr.board_id = e.id;
      tr.seed = s;
      while (!st.done) {
        const int a = policy(st, rng);
        const auto r = env::step(st, a);
        tr.actions.push_back(a);
        tr.rewards.push_back(r.reward);
      }
      tr.whites = st.whites_revealed;
      tr.z = env::z_score(tr.whites, it->second);
      be.mean_z += tr.z;
      be.mean_whites += tr.whites;
      all_z.push_back(tr.z);
      rep.traces.push_back(std::move(tr));
    }
    be.mean_z /= episodes_per_board;
    be.mean_whites /= episodes_per_board;
    rep.boards.push_back(be);
  }
  rep.episodes = static_cast<int>(all_z.size());
  rep.mean_z = analysis::mean(all_z);
  const auto ci = analysis::bootstrap_ci(all_z, 0.95, 10000, derive_seed(seed, 8));
  rep.ci_low = ci.low;
  rep.ci_high = ci.high;
  return rep;
}

EvalReport evaluate(const PolicyNet& net, const BoardDataset& test,
                    int episodes_per_board, std::uint64_t seed,
                    const env::HeuristicTable* table, int heuristic_runs) {
  // The recurrent state lives across calls within one episode.
  struct Memory {
    const env::EnvState* episode = nullptr;
    Hidden hidden = Hidden::zeros();
    int prev_action = -1;
    double prev_reward = 0.0;
    int steps = -1;
  };
  auto mem = std::make_shared<Memory>();
  Policy policy = [&net, mem](const env::EnvState& st, Rng&) {
    if (st.steps == 0 || st.steps != mem->steps + 1 || mem->episode != &st) {
      mem->hidden = Hidden::zeros();
      mem->prev_action = -1;
      mem->prev_reward = 0.0;
      mem->episode = &st;
    }
    if (mem->prev_action >= 0) {
      // Reward of the previous action, recomputed from the visible outcome.
      const int a = mem->prev_action;
      mem->prev_reward = st.underlying.red(a) ? 1.0 : -1.0;
    }
    const auto r = act(net, st.observe(), mem->prev_action, mem->prev_reward,
                       mem->hidden, nullptr, true, &st.revealed);
    mem->hidden = r.hidden;
    mem->prev_action = r.action;
    mem->steps = st.steps;
    return r.action;
  };
  return evaluate_policy(policy, test, episodes_per_board, seed, table, heuristic_runs);
}

}  // namespace gridmind::agent
