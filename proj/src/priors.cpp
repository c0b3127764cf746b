#include "gridmind/priors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace gridmind::priors {

namespace {

Board rect(int n, int r0, int c0, int h, int w, bool outline) {
  Board b(n);
  for (int r = r0; r < r0 + h; ++r) {
    for (int c = c0; c < c0 + w; ++c) {
      const bool edge = r == r0 || r == r0 + h - 1 || c == c0 || c == c0 + w - 1;
      if (!outline || edge) b.set(r, c, true);
    }
  }
  return b;
}

void push_unique(std::vector<Board>& out, Board b) {
  if (std::find(out.begin(), out.end(), b) == out.end()) out.push_back(std::move(b));
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void fill_input(const Board& b, int masked, double* row) {
  const int a = b.area();
  for (int i = 0; i < a; ++i) {
    row[i] = (i != masked && b.red(i)) ? 1.0 : 0.0;
    row[a + i] = i == masked ? 1.0 : 0.0;
  }
}

}  // namespace

const std::vector<RuleFamily>& all_rule_families() {
  static const std::vector<RuleFamily> all{
      RuleFamily::Row,      RuleFamily::Column,   RuleFamily::RectOutline,
      RuleFamily::RectFill, RuleFamily::Diagonal, RuleFamily::MirrorPair};
  return all;
}

std::string to_string(RuleFamily f) {
  switch (f) {
    case RuleFamily::Row: return "row";
    case RuleFamily::Column: return "column";
    case RuleFamily::RectOutline: return "rect-outline";
    case RuleFamily::RectFill: return "rect-fill";
    case RuleFamily::Diagonal: return "diagonal";
    case RuleFamily::MirrorPair: return "mirror-pair";
  }
  return "?";
}

RuleFamily parse_rule_family(const std::string& name) {
  for (RuleFamily f : all_rule_families()) {
    if (to_string(f) == name) return f;
  }
  throw ValidationError("unknown rule family '" + name + "'");
}

std::vector<Board> family_boards(RuleFamily f, int n) {
  std::vector<Board> out;
  switch (f) {
    case RuleFamily::Row:
      for (int r = 0; r < n; ++r) out.push_back(rect(n, r, 0, 1, n, false));
      break;
    case RuleFamily::Column:
      for (int c = 0; c < n; ++c) out.push_back(rect(n, 0, c, n, 1, false));
      break;
    case RuleFamily::RectOutline:
      for (int h = 3; h <= n; ++h) {
        for (int w = 3; w <= n; ++w) {
          if ((h - 2) * (w - 2) < 2) continue;
          for (int r = 0; r + h <= n; ++r) {
            for (int c = 0; c + w <= n; ++c) out.push_back(rect(n, r, c, h, w, true));
          }
        }
      }
      break;
    case RuleFamily::RectFill:
      for (int h = 2; h <= n; ++h) {
        for (int w = 2; w <= n; ++w) {
          for (int r = 0; r + h <= n; ++r) {
            for (int c = 0; c + w <= n; ++c) out.push_back(rect(n, r, c, h, w, false));
          }
        }
      }
      break;
    case RuleFamily::Diagonal: {
      Board main(n), anti(n);
      for (int i = 0; i < n; ++i) {
        main.set(i, i, true);
        anti.set(i, n - 1 - i, true);
      }
      out.push_back(main);
      out.push_back(anti);
      break;
    }
    case RuleFamily::MirrorPair:
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n - 1 - c; ++c) {
          Board b(n);
          b.set(r, c, true);
          b.set(r, n - 1 - c, true);
          push_unique(out, b);
        }
      }
      for (int c = 0; c < n; ++c) {
        for (int r = 0; r < n - 1 - r; ++r) {
          Board b(n);
          b.set(r, c, true);
          b.set(n - 1 - r, c, true);
          push_unique(out, b);
        }
      }
      break;
  }
  return out;
}

std::optional<RuleFamily> rule_witness(const Board& board) {
  for (RuleFamily f : all_rule_families()) {
    const auto boards = family_boards(f, board.n());
    if (std::find(boards.begin(), boards.end(), board) != boards.end()) return f;
  }
  return std::nullopt;
}

RuleGenerator RuleGenerator::standard(int n) {
  RuleGenerator g;
  g.n = n;
  for (RuleFamily f : all_rule_families()) g.mixture.emplace_back(f, 1.0);
  return g;
}

Board RuleGenerator::generate(Rng& rng) const {
  std::vector<double> w;
  std::vector<std::vector<Board>> pools;
  for (const auto& [f, weight] : mixture) {
    if (weight < 0) throw ValidationError("negative mixture weight");
    pools.push_back(family_boards(f, n));
    w.push_back(pools.back().empty() ? 0.0 : weight);
  }
  if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) {
    throw ValidationError("rule mixture has no usable family for n=" +
                          std::to_string(n));
  }
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  const auto& pool = pools[pick(rng)];
  return pool[uniform_index(rng, pool.size())];
}

BoardDataset generate_prior_corpus(const RuleGenerator& gen, int count,
                                   std::uint64_t seed) {
  if (count <= 0) throw ValidationError("corpus count must be positive");
  Rng rng(seed);
  BoardDataset ds;
  for (int i = 0; i < count; ++i) ds.accumulate(gen.generate(rng), 1.0, "prior-");
  return ds;
}

// --- conditional model -----------------------------------------------------------

ConditionalModel::ConditionalModel(int n, nn::Activation act, Rng* rng)
    : n_(n), act_(act) {
  if (n < 2 || n > Board::kMaxSide) throw ValidationError("bad board side");
  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  const auto in = static_cast<std::size_t>(2 * n * n);
  layers_.push_back(nn::Dense::create(ps_, "h1", in, kHidden, r));
  layers_.push_back(nn::Dense::create(ps_, "h2", kHidden, kHidden, r));
  layers_.push_back(nn::Dense::create(ps_, "h3", kHidden, kHidden, r));
  layers_.push_back(nn::Dense::create(ps_, "out", kHidden, 1, r));
  if (!rng) {
    for (auto& v : ps_.vars()) v.mutable_value().fill(0.0);
  }
}

ConditionalModel::ConditionalModel(int n, std::uint64_t seed, nn::Activation act)
    : ConditionalModel(n, act, nullptr) {
  Rng rng(seed);
  *this = ConditionalModel(n, act, &rng);
}

ConditionalModel ConditionalModel::zeros(int n, nn::Activation act) {
  return ConditionalModel(n, act, nullptr);
}

nn::Var ConditionalModel::forward(const std::vector<Board>& boards,
                                  const std::vector<int>& masked) const {
  if (boards.size() != masked.size()) {
    throw std::invalid_argument("boards/masked length mismatch");
  }
  const std::size_t B = boards.size();
  const auto in = static_cast<std::size_t>(2 * n_ * n_);
  nn::Tensor x({B, in});
  for (std::size_t b = 0; b < B; ++b) {
    if (boards[b].n() != n_) throw ValidationError("board size mismatch");
    if (masked[b] < 0 || masked[b] >= n_ * n_) {
      throw std::out_of_range("masked tile out of range");
    }
    fill_input(boards[b], masked[b], x.data() + b * in);
  }
  nn::Var h = nn::constant(std::move(x));
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    h = nn::activate(layers_[l](h), act_);
  }
  return layers_.back()(h);
}

double ConditionalModel::prob_red(const Board& board, int masked) const {
  if (board.n() != n_) throw ValidationError("board size mismatch");
  std::vector<double> cur(static_cast<std::size_t>(2 * n_ * n_));
  fill_input(board, masked, cur.data());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const nn::Tensor& w = layers_[l].w.value();
    const nn::Tensor& b = layers_[l].b.value();
    const std::size_t out = w.dim(0), in = w.dim(1);
    next.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* wr = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * cur[i];
      if (l + 1 < layers_.size()) {
        s = act_ == nn::Activation::Relu ? std::max(s, 0.0) : std::tanh(s);
      }
      next[o] = s;
    }
    cur.swap(next);
  }
  return sigmoid(cur[0]);
}

Conditional ConditionalModel::as_conditional() const {
  return [this](const Board& b, int masked) { return prob_red(b, masked); };
}

void ConditionalModel::save(const std::filesystem::path& path) const {
  ps_.save(path, {{"kind", "conditional"},
                  {"n", n_},
                  {"hidden", kHidden},
                  {"layers", 3},
                  {"activation", nn::to_string(act_)}});
}

ConditionalModel ConditionalModel::load(const std::filesystem::path& path) {
  const Json meta = nn::ParamStore::read_manifest(path).at("meta");
  if (meta.value("kind", "") != "conditional") {
    throw ValidationError(path.string() + " is not a conditional-model checkpoint");
  }
  ConditionalModel m = zeros(meta.at("n").get<int>(),
                             nn::parse_activation(meta.at("activation")));
  m.ps_.load(path);
  return m;
}

std::vector<double> train_conditional(ConditionalModel& model,
                                      const BoardDataset& dataset,
                                      const ConditionalTrainConfig& cfg) {
  if (dataset.empty() || dataset.total_weight() <= 0.0) {
    throw ValidationError("train_conditional: empty dataset");
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const int area = model.n() * model.n();
  struct Pair {
    std::size_t entry;
    int masked;
    double weight;
  };
  std::vector<Pair> pairs;
  const double total = dataset.total_weight();
  for (std::size_t e = 0; e < dataset.size(); ++e) {
    const auto& entry = dataset.at(e);
    if (entry.weight <= 0.0) continue;
    if (entry.board.n() != model.n()) throw ValidationError("board size mismatch");
    for (int m = 0; m < area; ++m) {
      pairs.push_back({e, m, entry.weight / total / area});
    }
  }

  auto batch_loss = [&](const std::vector<std::size_t>& idx) {
    std::vector<Board> boards;
    std::vector<int> masked;
    std::vector<double> targets, weights;
    for (std::size_t k : idx) {
      const Pair& p = pairs[k];
      const Board& b = dataset.at(p.entry).board;
      boards.push_back(b);
      masked.push_back(p.masked);
      targets.push_back(b.red(p.masked) ? 1.0 : 0.0);
      weights.push_back(p.weight);
    }
    const std::size_t B = idx.size();
    return nn::bce_with_logits(model.forward(boards, masked),
                               nn::constant(nn::Tensor({B, 1}, std::move(targets))),
                               std::move(weights));
  };

  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  Rng rng(cfg.seed);
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = all;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(s),
                                   order.begin() + static_cast<long>(e));
      model.params().zero_grad();
      nn::backward(batch_loss(idx));
      model.params().adam_step(cfg.lr);
    }
    losses.push_back(batch_loss(all).value().item());
  }
  return losses;
}

double masked_accuracy(const Conditional& model, const BoardDataset& dataset,
                       int trials, std::uint64_t seed) {
  if (trials <= 0) throw std::invalid_argument("trials must be positive");
  Rng rng(seed);
  int correct = 0;
  for (int t = 0; t < trials; ++t) {
    const Board& b = dataset.at(dataset.sample_index(rng)).board;
    const int m = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(b.area())));
    const bool predicted_red = model(b, m) >= 0.5;
    if (predicted_red == b.red(m)) ++correct;
  }
  return static_cast<double>(correct) / trials;
}

// --- Gibbs sampling ----------------------------------------------------------------

void GibbsConfig::validate() const {
  if (n < 2 || n > Board::kMaxSide) throw ValidationError("bad board side");
  if (chains <= 0) throw ValidationError("chains must be positive");
  if (sweeps <= 0) throw ValidationError("sweeps must be positive");
  if (burn_in < 0 || burn_in >= sweeps) {
    throw ValidationError("burn_in must be in [0, sweeps)");
  }
  if (thin < 1) throw ValidationError("thin must be at least 1");
}

namespace {

Board random_board(int n, Rng& rng) {
  Board b(n);
  for (int i = 0; i < b.area(); ++i) b.set(i, uniform01(rng) < 0.5);
  return b;
}

void gibbs_update(const Conditional& model, Board& b, Rng& rng) {
  const int i = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(b.area())));
  const double p = model(b, i);
  b.set(i, uniform01(rng) < p);
}

}  // namespace

BoardDataset gibbs_sample(const Conditional& model, const GibbsConfig& cfg) {
  cfg.validate();
  BoardDataset out;
  const int area = cfg.n * cfg.n;
  for (int chain = 0; chain < cfg.chains; ++chain) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(chain)));
    Board b = random_board(cfg.n, rng);
    for (int sweep = 1; sweep <= cfg.sweeps; ++sweep) {
      for (int s = 0; s < area; ++s) gibbs_update(model, b, rng);
      if (sweep > cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0) {
        out.accumulate(b, 1.0, "gibbs-");
      }
    }
  }
  return out;
}

std::vector<double> gibbs_state_counts(const Conditional& model, int n,
                                       long steps, long burn_in_steps,
                                       std::uint64_t seed) {
  if (n * n > 16) throw ValidationError("state counting needs n^2 <= 16");
  if (steps <= burn_in_steps) throw ValidationError("steps must exceed burn-in");
  Rng rng(seed);
  Board b = random_board(n, rng);
  std::vector<double> counts(std::size_t{1} << (n * n), 0.0);
  for (long t = 1; t <= steps; ++t) {
    gibbs_update(model, b, rng);
    if (t > burn_in_steps) counts[b.mask()] += 1.0;
  }
  return counts;
}

std::vector<std::vector<Transition>> gibbs_kernel(const Conditional& model,
                                                  int n) {
  if (n < 2 || n * n > 16) throw ValidationError("exact kernel needs n^2 <= 16");
  const int area = n * n;
  const std::size_t S = std::size_t{1} << area;
  std::vector<std::vector<Transition>> k(S);
  for (std::size_t s = 0; s < S; ++s) {
    const Board b = Board::from_mask(n, s);
    double stay = 0.0;
    auto& row = k[s];
    for (int i = 0; i < area; ++i) {
      const double p = std::clamp(model(b, i), 0.0, 1.0);
      const std::uint64_t bit = std::uint64_t{1} << i;
      const bool red = (s & bit) != 0;
      const double p_flip = red ? 1.0 - p : p;
      stay += (1.0 - p_flip) / area;
      if (p_flip > 0.0) {
        row.push_back({static_cast<std::uint32_t>(s ^ bit), p_flip / area});
      }
    }
    if (stay > 0.0) row.push_back({static_cast<std::uint32_t>(s), stay});
  }
  return k;
}

std::vector<double> apply_kernel(const std::vector<std::vector<Transition>>& k,
                                 const std::vector<double>& pi) {
  std::vector<double> out(pi.size(), 0.0);
  for (std::size_t s = 0; s < k.size(); ++s) {
    if (pi[s] == 0.0) continue;
    for (const auto& t : k[s]) out[t.to] += pi[s] * t.p;
  }
  return out;
}

namespace {

// Number of strongly connected components with no outgoing edges.
int closed_class_count(const std::vector<std::vector<Transition>>& k) {
  const std::size_t S = k.size();
  std::vector<int> index(S, -1), low(S, 0), comp(S, -1);
  std::vector<char> on_stack(S, 0);
  std::vector<std::uint32_t> stack;
  int counter = 0, comps = 0;
  struct Frame {
    std::uint32_t v;
    std::size_t edge;
  };
  for (std::size_t root = 0; root < S; ++root) {
    if (index[root] >= 0) continue;
    std::vector<Frame> call{{static_cast<std::uint32_t>(root), 0}};
    index[root] = low[root] = counter++;
    stack.push_back(static_cast<std::uint32_t>(root));
    on_stack[root] = 1;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.edge < k[f.v].size()) {
        const std::uint32_t w = k[f.v][f.edge++].to;
        if (index[w] < 0) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
        continue;
      }
      const std::uint32_t v = f.v;
      call.pop_back();
      if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
      if (low[v] == index[v]) {
        std::uint32_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          comp[w] = comps;
        } while (w != v);
        ++comps;
      }
    }
  }
  std::vector<char> leaves(static_cast<std::size_t>(comps), 0);
  for (std::size_t s = 0; s < S; ++s) {
    for (const auto& t : k[s]) {
      if (comp[t.to] != comp[s]) leaves[static_cast<std::size_t>(comp[s])] = 1;
    }
  }
  return static_cast<int>(std::count(leaves.begin(), leaves.end(), 0));
}

}  // namespace

std::vector<double> exact_stationary(const Conditional& model, int n, double tol) {
  const auto k = gibbs_kernel(model, n);
  const int closed = closed_class_count(k);
  if (closed != 1) {
    throw NonErgodicError("Gibbs kernel has " + std::to_string(closed) +
                          " closed classes; stationary distribution is not unique");
  }
  const std::size_t S = k.size();
  std::vector<double> pi(S, 1.0 / static_cast<double>(S));
  for (long it = 0; it < 10'000'000; ++it) {
    std::vector<double> next = apply_kernel(k, pi);
    double residual = 0.0, total = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      next[s] = 0.5 * (next[s] + pi[s]);
      residual += std::abs(next[s] - pi[s]);
      total += next[s];
    }
    for (double& x : next) x /= total;
    pi.swap(next);
    if (residual < tol) return pi;
  }
  throw std::runtime_error("exact_stationary did not converge");
}

std::vector<double> tile_marginals(const BoardDataset& dataset) {
  if (dataset.empty()) throw ValidationError("empty dataset");
  const int area = dataset.at(0).board.area();
  std::vector<double> m(static_cast<std::size_t>(area), 0.0);
  const double total = dataset.total_weight();
  for (const auto& e : dataset.entries()) {
    if (e.board.area() != area) throw ValidationError("mixed board sizes");
    for (int i = 0; i < area; ++i) {
      if (e.board.red(i)) m[static_cast<std::size_t>(i)] += e.weight / total;
    }
  }
  return m;
}

}  // namespace gridmind::priors
