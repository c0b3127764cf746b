#include "gridmind/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace gridmind::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": shape mismatch: " + what);
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.value().rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " +
                        shape_string(a.shape()));
  }
}

Var make(Tensor value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool rg = std::any_of(parents.begin(), parents.end(),
                              [](const auto& p) { return p->requires_grad; });
  if (rg) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

// Elementwise unary op given f(x) and f'(x, y).
template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make(std::move(out), {a.node()}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    shape_error("Tensor", "data length " + std::to_string(data_.size()) +
                              " for shape " + shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on non-scalar");
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    shape_error("reshape", shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) {
    grad = Tensor(value.shape(), 0.0);
  }
  return grad;
}

const Tensor& Var::value() const { return node_->value; }
Tensor& Var::mutable_value() { return node_->value; }
const Tensor& Var::grad() const { return node_->grad_buffer(); }
Tensor& Var::mutable_grad() { return node_->grad_buffer(); }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  return Var(std::move(node));
}

Var leaf(Tensor t) {
  auto node = std::make_shared<Node>();
  node->value = std::move(t);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    n->grad_buffer();
    n->backward(*n);
  }
}

// --- ops -------------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t B = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (w.shape()[1] != in) {
    shape_error("linear", "x " + shape_string(x.shape()) + " w " +
                              shape_string(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.value().rank() != 1 || b.shape()[0] != out)) {
    shape_error("linear", "bias " + shape_string(b.shape()));
  }
  Tensor y({B, out});
  MapM Y(y.data(), B, out);
  Y.noalias() = MapC(x.value().data(), B, in) *
                MapC(w.value().data(), out, in).transpose();
  if (has_bias) {
    Eigen::Map<const Eigen::RowVectorXd> bias(b.value().data(), out);
    Y.rowwise() += bias;
  }
  std::vector<std::shared_ptr<Node>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return make(std::move(y), std::move(parents), [B, in, out](Node& self) {
    MapC dY(self.grad.data(), B, out);
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad) {
      MapM(xn.grad_buffer().data(), B, in).noalias() +=
          dY * MapC(wn.value.data(), out, in);
    }
    if (wn.requires_grad) {
      MapM(wn.grad_buffer().data(), out, in).noalias() +=
          dY.transpose() * MapC(xn.value.data(), B, in);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->grad_buffer().data(),
                                     out) += dY.colwise().sum();
    }
  });
}

Var linear(const Var& x, const Var& w) { return linear(x, w, Var()); }

Var conv2d(const Var& x, const Var& k, const Var& b) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", k, 4);
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                    W = x.shape()[3];
  const std::size_t O = k.shape()[0], K = k.shape()[2];
  if (k.shape()[1] != C || k.shape()[3] != K || K % 2 == 0) {
    shape_error("conv2d", "x " + shape_string(x.shape()) + " k " +
                              shape_string(k.shape()));
  }
  if (b.value().rank() != 1 || b.shape()[0] != O) {
    shape_error("conv2d", "bias " + shape_string(b.shape()));
  }
  const long pad = static_cast<long>(K / 2);
  Tensor y({B, O, H, W});
  const double* xv = x.value().data();
  const double* kv = k.value().data();
  const double* bv = b.value().data();
  double* yv = y.data();
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t o = 0; o < O; ++o) {
      double* yo = yv + ((bi * O + o) * H) * W;
      for (std::size_t p = 0; p < H * W; ++p) yo[p] = bv[o];
      for (std::size_t c = 0; c < C; ++c) {
        const double* xc = xv + ((bi * C + c) * H) * W;
        const double* kc = kv + ((o * C + c) * K) * K;
        for (std::size_t u = 0; u < K; ++u) {
          for (std::size_t v = 0; v < K; ++v) {
            const double kw = kc[u * K + v];
            for (std::size_t i = 0; i < H; ++i) {
              const long si = static_cast<long>(i + u) - pad;
              if (si < 0 || si >= static_cast<long>(H)) continue;
              for (std::size_t j = 0; j < W; ++j) {
                const long sj = static_cast<long>(j + v) - pad;
                if (sj < 0 || sj >= static_cast<long>(W)) continue;
                yo[i * W + j] += kw * xc[si * W + sj];
              }
            }
          }
        }
      }
    }
  }
  return make(std::move(y), {x.node(), k.node(), b.node()},
              [B, C, H, W, O, K, pad](Node& self) {
    Node& xn = *self.parents[0];
    Node& kn = *self.parents[1];
    Node& bn = *self.parents[2];
    const double* gy = self.grad.data();
    const double* xv = xn.value.data();
    const double* kv = kn.value.data();
    double* gx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
    double* gk = kn.requires_grad ? kn.grad_buffer().data() : nullptr;
    double* gb = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t o = 0; o < O; ++o) {
        const double* go = gy + ((bi * O + o) * H) * W;
        if (gb) {
          for (std::size_t p = 0; p < H * W; ++p) gb[o] += go[p];
        }
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t xoff = ((bi * C + c) * H) * W;
          const std::size_t koff = ((o * C + c) * K) * K;
          for (std::size_t u = 0; u < K; ++u) {
            for (std::size_t v = 0; v < K; ++v) {
              const double kw = kv[koff + u * K + v];
              double acc = 0.0;
              for (std::size_t i = 0; i < H; ++i) {
                const long si = static_cast<long>(i + u) - pad;
                if (si < 0 || si >= static_cast<long>(H)) continue;
                for (std::size_t j = 0; j < W; ++j) {
                  const long sj = static_cast<long>(j + v) - pad;
                  if (sj < 0 || sj >= static_cast<long>(W)) continue;
                  const double g = go[i * W + j];
                  acc += g * xv[xoff + si * W + sj];
                  if (gx) gx[xoff + si * W + sj] += g * kw;
                }
              }
              if (gk) gk[koff + u * K + v] += acc;
            }
          }
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const double sgn = k == 0 ? 1.0 : -1.0;
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sgn * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) {
      Tensor& g = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      Tensor& g = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var minimum(const Var& a, const Var& b) {
  require_same("minimum", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(a.value()[i], b.value()[i]);
  }
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      // Ties route the gradient to the first argument.
      if (a.value[i] <= b.value[i]) {
        if (a.requires_grad) a.grad_buffer()[i] += self.grad[i];
      } else if (b.requires_grad) {
        b.grad_buffer()[i] += self.grad[i];
      }
    }
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  return a == Activation::Relu ? "relu" : "tanh";
}

Var activate(const Var& a, Activation act) {
  return act == Activation::Relu ? relu(a) : tanh(a);
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t B = parts[0].shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.shape()[0] != B) shape_error("concat_cols", "row counts differ");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
    parents.push_back(p.node());
  }
  Tensor out({B, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < B; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k],
                  out.data() + r * total + off);
    }
    off += widths[k];
  }
  return make(std::move(out), std::move(parents),
              [B, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        Tensor& g = p.grad_buffer();
        for (std::size_t r = 0; r < B; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            g[r * widths[k] + j] += self.grad[r * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  require_rank("slice_cols", a, 2);
  const std::size_t B = a.shape()[0], N = a.shape()[1];
  if (start + len > N) shape_error("slice_cols", "range past end");
  Tensor out({B, len});
  for (std::size_t r = 0; r < B; ++r) {
    std::copy_n(a.value().data() + r * N + start, len, out.data() + r * len);
  }
  return make(std::move(out), {a.node()}, [B, N, start, len](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t j = 0; j < len; ++j) {
        g[r * N + start + j] += self.grad[r * len + j];
      }
    }
  });
}

namespace {

// Row-wise log-softmax values.
Tensor log_softmax_values(const Tensor& a) {
  const std::size_t B = a.dim(0), N = a.dim(1);
  Tensor out({B, N});
  for (std::size_t r = 0; r < B; ++r) {
    const double* x = a.data() + r * N;
    const double m = *std::max_element(x, x + N);
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) s += std::exp(x[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < N; ++j) out[r * N + j] = x[j] - lse;
  }
  return out;
}

}  // namespace

Var log_softmax(const Var& a) {
  require_rank("log_softmax", a, 2);
  const std::size_t B = a.shape()[0], N = a.shape()[1];
  return make(log_softmax_values(a.value()), {a.node()}, [B, N](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < B; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < N; ++j) gs += self.grad[r * N + j];
      for (std::size_t j = 0; j < N; ++j) {
        g[r * N + j] += self.grad[r * N + j] - std::exp(self.value[r * N + j]) * gs;
      }
    }
  });
}

Var softmax(const Var& a) {
  require_rank("softmax", a, 2);
  const std::size_t B = a.shape()[0], N = a.shape()[1];
  Tensor out = log_softmax_values(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return make(std::move(out), {a.node()}, [B, N](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < B; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < N; ++j) {
        dot += self.grad[r * N + j] * self.value[r * N + j];
      }
      for (std::size_t j = 0; j < N; ++j) {
        g[r * N + j] += self.value[r * N + j] * (self.grad[r * N + j] - dot);
      }
    }
  });
}

Var pick(const Var& a, const std::vector<int>& idx) {
  require_rank("pick", a, 2);
  const std::size_t B = a.shape()[0], N = a.shape()[1];
  if (idx.size() != B) shape_error("pick", "index count != rows");
  Tensor out({B});
  for (std::size_t r = 0; r < B; ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= N) {
      throw std::out_of_range("pick: index out of range");
    }
    out[r] = a.value()[r * N + static_cast<std::size_t>(idx[r])];
  }
  return make(std::move(out), {a.node()}, [N, idx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      g[r * N + static_cast<std::size_t>(idx[r])] += self.grad[r];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make(Tensor::scalar(s), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mse_loss(const Var& pred, const Var& target) {
  require_same("mse_loss", pred, target);
  const std::size_t N = pred.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  return make(Tensor::scalar(s / static_cast<double>(N)),
              {pred.node(), target.node()}, [N](Node& self) {
    Node& p = *self.parents[0];
    Node& t = *self.parents[1];
    const double k = 2.0 * self.grad[0] / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      const double d = k * (p.value[i] - t.value[i]);
      if (p.requires_grad) p.grad_buffer()[i] += d;
      if (t.requires_grad) t.grad_buffer()[i] -= d;
    }
  });
}

Var cross_entropy_loss(const Var& logits, const Var& target) {
  require_rank("cross_entropy_loss", logits, 2);
  require_same("cross_entropy_loss", logits, target);
  const std::size_t B = logits.shape()[0], N = logits.shape()[1];
  Tensor ls = log_softmax_values(logits.value());
  double loss = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    if (target.value()[i] != 0.0) loss -= target.value()[i] * ls[i];
  }
  loss /= static_cast<double>(B);
  return make(Tensor::scalar(loss), {logits.node(), target.node()},
              [B, N, ls = std::move(ls)](Node& self) {
    Node& l = *self.parents[0];
    Node& t = *self.parents[1];
    const double k = self.grad[0] / static_cast<double>(B);
    for (std::size_t r = 0; r < B; ++r) {
      double tsum = 0.0;
      for (std::size_t j = 0; j < N; ++j) tsum += t.value[r * N + j];
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t i = r * N + j;
        if (l.requires_grad) {
          l.grad_buffer()[i] += k * (tsum * std::exp(ls[i]) - t.value[i]);
        }
        if (t.requires_grad) t.grad_buffer()[i] -= k * ls[i];
      }
    }
  });
}

Var bce_with_logits(const Var& logits, const Var& target) {
  return bce_with_logits(logits, target, {});
}

Var bce_with_logits(const Var& logits, const Var& target,
                    std::vector<double> weights) {
  require_same("bce_with_logits", logits, target);
  const std::size_t N = logits.value().size();
  if (weights.empty()) weights.assign(N, 1.0);
  if (weights.size() != N) {
    throw std::invalid_argument("bce_with_logits: weight count mismatch");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw std::invalid_argument("bce_with_logits: zero weight");
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double z = logits.value()[i], y = target.value()[i];
    loss += weights[i] *
            (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
  }
  return make(Tensor::scalar(loss / wsum), {logits.node(), target.node()},
              [N, wsum, weights = std::move(weights)](Node& self) {
    Node& l = *self.parents[0];
    Node& t = *self.parents[1];
    const double k = self.grad[0] / wsum;
    for (std::size_t i = 0; i < N; ++i) {
      const double z = l.value[i];
      const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                              : std::exp(z) / (1.0 + std::exp(z));
      if (l.requires_grad) l.grad_buffer()[i] += k * weights[i] * (s - t.value[i]);
      if (t.requires_grad) t.grad_buffer()[i] -= k * weights[i] * z;
    }
  });
}

Var entropy(const Var& logits) {
  require_rank("entropy", logits, 2);
  const std::size_t B = logits.shape()[0], N = logits.shape()[1];
  Tensor ls = log_softmax_values(logits.value());
  Tensor h({B});
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      s -= std::exp(ls[r * N + j]) * ls[r * N + j];
    }
    h[r] = s;
  }
  return make(std::move(h), {logits.node()},
              [B, N, ls = std::move(ls)](Node& self) {
    Node& l = *self.parents[0];
    if (!l.requires_grad) return;
    Tensor& g = l.grad_buffer();
    for (std::size_t r = 0; r < B; ++r) {
      const double hr = self.value[r];
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t i = r * N + j;
        g[i] += self.grad[r] * (-std::exp(ls[i]) * (ls[i] + hr));
      }
    }
  });
}

std::pair<Var, Var> lstm_cell(const Var& x, const Var& h, const Var& c,
                              const Var& wx, const Var& wh, const Var& b) {
  const std::size_t H = h.shape().at(1);
  if (wx.shape().at(0) != 4 * H || wh.shape().at(0) != 4 * H ||
      wh.shape().at(1) != H || c.shape() != h.shape()) {
    shape_error("lstm_cell", "hidden size " + std::to_string(H));
  }
  const Var gates = add(linear(x, wx, b), linear(h, wh));
  const Var i = sigmoid(slice_cols(gates, 0, H));
  const Var f = sigmoid(slice_cols(gates, H, H));
  const Var g = tanh(slice_cols(gates, 2 * H, H));
  const Var o = sigmoid(slice_cols(gates, 3 * H, H));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  return {std::move(h_next), std::move(c_next)};
}

// --- ParamStore --------------------------------------------------------------

Var ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  Var v = leaf(std::move(init));
  names_.push_back(name);
  params_.push_back(v);
  m_.emplace_back(v.shape(), 0.0);
  v_.emplace_back(v.shape(), 0.0);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return params_[i];
  }
  throw std::out_of_range("no parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.mutable_grad().fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad().values()) s += g * g;
  }
  return std::sqrt(s);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / (norm + 1e-6);
    for (auto& p : params_) {
      for (double& g : p.mutable_grad().values()) g *= k;
    }
  }
  return norm;
}

void ParamStore::adam_step(double lr, const AdamConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k].mutable_value();
    const Tensor& g = params_[k].grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

std::vector<double> ParamStore::flat_values() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) {
    out.insert(out.end(), p.value().values().begin(), p.value().values().end());
  }
  return out;
}

void ParamStore::set_flat_values(std::span<const double> values) {
  if (values.size() != count()) {
    throw ValidationError("parameter count mismatch: expected " +
                          std::to_string(count()) + ", got " +
                          std::to_string(values.size()));
  }
  std::size_t off = 0;
  for (auto& p : params_) {
    Tensor& t = p.mutable_value();
    std::copy_n(values.data() + off, t.size(), t.data());
    off += t.size();
  }
}

namespace {

std::uint64_t to_le(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  return __builtin_bswap64(x);
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

void ParamStore::save(const std::filesystem::path& path, const Json& meta) const {
  Json params = Json::array();
  std::string blob;
  std::size_t off = 0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const Tensor& t = params_[k].value();
    params.push_back({{"name", names_[k]},
                      {"shape", t.shape()},
                      {"offset", off},
                      {"count", t.size()}});
    for (double d : t.values()) {
      std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(d));
      blob.append(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    off += t.size();
  }
  write_text(path, blob);
  Json manifest = {{"format", "gridmind-f64le-v1"},
                   {"total", off},
                   {"params", params},
                   {"meta", meta.is_null() ? Json::object() : meta}};
  write_json(manifest_path(path), manifest);
}

Json ParamStore::read_manifest(const std::filesystem::path& path) {
  return read_json(manifest_path(path));
}

Json ParamStore::load(const std::filesystem::path& path) {
  const Json manifest = read_manifest(path);
  if (manifest.value("format", "") != "gridmind-f64le-v1") {
    throw ValidationError(path.string() + ": unknown checkpoint format");
  }
  const auto& params = manifest.at("params");
  if (params.size() != params_.size()) {
    throw ValidationError(path.string() + ": parameter count mismatch");
  }
  const std::string blob = read_text(path);
  if (blob.size() != manifest.at("total").get<std::size_t>() * 8) {
    throw ValidationError(path.string() + ": blob size does not match manifest");
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& p = params[k];
    if (p.at("name").get<std::string>() != names_[k] ||
        p.at("shape").get<Shape>() != params_[k].shape()) {
      throw ValidationError(path.string() + ": parameter " + names_[k] +
                            " does not match manifest");
    }
    Tensor& t = params_[k].mutable_value();
    const std::size_t off = p.at("offset").get<std::size_t>();
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, blob.data() + (off + i) * 8, 8);
      t[i] = std::bit_cast<double>(to_le(bits));
    }
  }
  return manifest.value("meta", Json::object());
}

// --- gradient check ------------------------------------------------------------

double grad_check(const std::function<Var()>& loss_fn, ParamStore& params,
                  double eps, std::size_t max_per_param, std::uint64_t seed) {
  Rng rng(seed);
  params.zero_grad();
  backward(loss_fn());
  std::vector<Tensor> analytic;
  for (const auto& p : params.vars()) analytic.push_back(p.grad());
  double worst = 0.0;
  auto vars = params.vars();
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor& w = vars[k].mutable_value();
    std::vector<std::size_t> coords(w.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_per_param > 0 && coords.size() > max_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_per_param);
    }
    for (std::size_t i : coords) {
      const double orig = w[i];
      w[i] = orig + eps;
      const double up = loss_fn().value().item();
      w[i] = orig - eps;
      const double down = loss_fn().value().item();
      w[i] = orig;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[k][i];
      const double denom = std::max({std::abs(ad), std::abs(fd), 1e-8});
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  params.zero_grad();
  return worst;
}

// --- layers --------------------------------------------------------------------

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Dense Dense::create(ParamStore& ps, const std::string& name, std::size_t in,
                    std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Dense d;
  d.w = ps.add(name + ".w", uniform_tensor({out, in}, bound, rng));
  d.b = ps.add(name + ".b", Tensor({out}, 0.0));
  return d;
}

Conv2d Conv2d::create(ParamStore& ps, const std::string& name,
                      std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                      Rng& rng) {
  const double fan_in = static_cast<double>(in_ch * ksize * ksize);
  const double fan_out = static_cast<double>(out_ch * ksize * ksize);
  Conv2d c;
  c.k = ps.add(name + ".k",
               uniform_tensor({out_ch, in_ch, ksize, ksize},
                              std::sqrt(6.0 / (fan_in + fan_out)), rng));
  c.b = ps.add(name + ".b", Tensor({out_ch}, 0.0));
  return c;
}

LstmCell LstmCell::create(ParamStore& ps, const std::string& name,
                          std::size_t in, std::size_t hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmCell l;
  l.hidden = hidden;
  l.wx = ps.add(name + ".wx", uniform_tensor({4 * hidden, in}, bound, rng));
  l.wh = ps.add(name + ".wh", uniform_tensor({4 * hidden, hidden}, bound, rng));
  Tensor b({4 * hidden}, 0.0);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  l.b = ps.add(name + ".b", std::move(b));
  return l;
}

}  // namespace gridmind::nn
