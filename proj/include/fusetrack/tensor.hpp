// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations run eagerly; when
// a Tape is active on the calling thread (see RecordingScope) and any input
// requires a gradient, the operation appends a node carrying its local
// backward rule. Tape::backward replays those nodes in reverse.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fusetrack {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t i) const;
  // Leading dimension, and the product of the remaining ones.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writable view; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  // Copy of the values with no gradient history.
  Tensor detach() const;

  // Gradient buffer, allocated as zeros on first use.
  std::span<double> grad_buffer() const;

  const std::shared_ptr<detail::TensorStorage>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorStorage> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorStorage> impl_;

  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            std::function<void(std::span<const double>)>, const char*);
};

class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorStorage>> inputs;
    std::shared_ptr<detail::TensorStorage> output;
    std::function<void(std::span<const double>)> backward;
  };

  void record(Node node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  bool produced(const Tensor& t) const;

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // the loss. Intermediate gradients are reset first, leaf gradients are not.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
};

// Makes `tape` the active tape of the calling thread for the scope lifetime.
class RecordingScope {
 public:
  explicit RecordingScope(Tape& tape);
  ~RecordingScope();
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Builds an op output. When recording and any input requires a gradient, the
// result requires one too and `backward` is appended to the active tape; it
// receives the gradient of the output. Throws NumericError on non-finite values.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward, const char* op_name);

void check_finite(std::span<const double> values, const char* op_name);

// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t uniform_index(std::size_t n);
  double normal();
  // Normal(0, stddev) resampled until within two standard deviations.
  double truncated_normal(double stddev);
  Tensor truncated_normal_tensor(Shape shape, double stddev, bool requires_grad = true);
  Tensor uniform_tensor(Shape shape, double lo, double hi, bool requires_grad = false);
  Tensor normal_tensor(Shape shape, double stddev, bool requires_grad = false);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Operations. 2-D operands are [rows, cols]; higher-rank tensors are treated as
// [dim0, product(rest)] where noted.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// a[m,n] + v[n] on every row.
Tensor add_row(const Tensor& a, const Tensor& v);
// a[k*n, d] + block[n, d] on each of the k row blocks.
Tensor add_tiled(const Tensor& a, const Tensor& block);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Values outside [lo, hi] are clamped and pass no gradient.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor reshape(const Tensor& a, Shape shape);

struct RowRange {
  std::size_t begin;
  std::size_t end;
  std::size_t size() const { return end - begin; }
};

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, RowRange range);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, RowRange range);
// out[i] = a[index[i]]; the backward pass scatter-adds.
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index);

// Multi-head scaled dot-product attention over `batch` independent groups of
// `tokens` rows. q, k, v are [batch*tokens, dim]; head h uses columns
// [h*dim/heads, (h+1)*dim/heads). No masking.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                      std::size_t heads);

// 3x3 patch extraction with zero padding 1 over `batch` grids of side x side
// pixels stored as [batch*side*side, channels] (row-major pixels). Output is
// [batch*out*out, 9*channels] with out = (side - 1) / stride + 1.
Tensor im2col3x3(const Tensor& x, std::size_t batch, std::size_t side, std::size_t stride);
std::size_t conv_out_side(std::size_t side, std::size_t stride);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Normalizes each column of x[n, c]. In training mode uses the batch
// statistics and updates the running averages; otherwise uses the averages.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// [groups*per_group, c] -> [groups, c], mean over each block of rows.
Tensor mean_pool_rows(const Tensor& x, std::size_t groups);

}  // namespace fusetrack
