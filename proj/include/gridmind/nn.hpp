#ifndef GRIDMIND_NN_HPP_
#define GRIDMIND_NN_HPP_

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gridmind/common.hpp"

// Minimal reverse-mode automatic differentiation over dense float64
// tensors, with the handful of layers the networks in this project need.
namespace gridmind::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  void fill(double v);
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Node;

// Handle to a value in the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const;
  Tensor& mutable_value();
  const Tensor& grad() const;
  Tensor& mutable_grad();
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

Var constant(Tensor t);
Var leaf(Tensor t);  // requires grad

// Reverse accumulation from a scalar. Gradients add into leaf grads.
void backward(const Var& loss);

// --- ops -----------------------------------------------------------------

// x [B, in], w [out, in], b [out] -> x w^T + b  [B, out]
Var linear(const Var& x, const Var& w, const Var& b);
Var linear(const Var& x, const Var& w);
// x [B, C, H, W], k [O, C, K, K], b [O]; stride 1, same padding, odd K.
Var conv2d(const Var& x, const Var& k, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var minimum(const Var& a, const Var& b);
Var clamp(const Var& a, double lo, double hi);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

enum class Activation { Relu, Tanh };
Activation parse_activation(const std::string& name);
std::string to_string(Activation a);
Var activate(const Var& a, Activation act);

Var reshape(const Var& a, Shape shape);
// Concatenates [B, n_i] matrices along columns.
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t start, std::size_t len);
// Row-wise over [B, N].
Var log_softmax(const Var& a);
Var softmax(const Var& a);
// out[b] = a[b, idx[b]]
Var pick(const Var& a, const std::vector<int>& idx);
Var sum(const Var& a);
Var mean(const Var& a);

// Mean over all elements of (pred - target)^2.
Var mse_loss(const Var& pred, const Var& target);
// Mean over rows of -sum_j target[b,j] * log_softmax(logits)[b,j].
Var cross_entropy_loss(const Var& logits, const Var& target);
// Mean binary cross-entropy on logits.
Var bce_with_logits(const Var& logits, const Var& target);
// Weighted mean: sum_i w_i * l_i / sum_i w_i.
Var bce_with_logits(const Var& logits, const Var& target,
                    std::vector<double> weights);
// Row-wise entropy of softmax(logits): [B].
Var entropy(const Var& logits);

// Standard 4-gate LSTM (gate order i, f, g, o).
// x [B, in], h/c [B, H], wx [4H, in], wh [4H, H], b [4H].
std::pair<Var, Var> lstm_cell(const Var& x, const Var& h, const Var& c,
                              const Var& wx, const Var& wh, const Var& b);

// --- parameters and optimiser ----------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return params_.size(); }
  std::size_t count() const;  // total scalars
  std::vector<Var> vars() const { return params_; }

  void zero_grad();
  double grad_norm() const;
  // Scales grads so their global norm is at most max_norm; returns the
  // pre-clip norm.
  double clip_grad_norm(double max_norm);

  void adam_step(double lr, const AdamConfig& cfg = {});
  long step_count() const { return step_; }

  // Raw little-endian float64 blob at `path`, manifest at `path` + ".json".
  void save(const std::filesystem::path& path, const Json& meta = {}) const;
  // Loads values into existing parameters (names and shapes must match).
  Json load(const std::filesystem::path& path);
  static Json read_manifest(const std::filesystem::path& path);

  // Flat copy of all values, parameter order.
  std::vector<double> flat_values() const;
  void set_flat_values(std::span<const double> values);

 private:
  std::vector<std::string> names_;
  std::vector<Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long step_ = 0;
};

// Central finite-difference check of d loss / d params. Returns the largest
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). With max_per_param > 0 only that
// many seeded random coordinates of each larger parameter are checked.
double grad_check(const std::function<Var()>& loss_fn, ParamStore& params,
                  double eps = 1e-5, std::size_t max_per_param = 0,
                  std::uint64_t seed = 0);

// --- layers ------------------------------------------------------------------

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

struct Dense {
  Var w;
  Var b;
  static Dense create(ParamStore& ps, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct Conv2d {
  Var k;
  Var b;
  static Conv2d create(ParamStore& ps, const std::string& name,
                       std::size_t in_ch, std::size_t out_ch,
                       std::size_t ksize, Rng& rng);
  Var operator()(const Var& x) const { return conv2d(x, k, b); }
};

struct LstmCell {
  Var wx;
  Var wh;
  Var b;
  std::size_t hidden = 0;
  // Forget-gate bias starts at 1.
  static LstmCell create(ParamStore& ps, const std::string& name,
                         std::size_t in, std::size_t hidden, Rng& rng);
  std::pair<Var, Var> operator()(const Var& x, const Var& h,
                                 const Var& c) const {
    return lstm_cell(x, h, c, wx, wh, b);
  }
};

}  // namespace gridmind::nn

#endif  // GRIDMIND_NN_HPP_
