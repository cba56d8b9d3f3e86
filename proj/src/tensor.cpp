// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/tensor.hpp"

// Small products otherwise take Eigen's coefficient-based path, whose
// vectorized and scalar branches round differently depending on the
// destination address. GEMM and GEMV results depend only on shapes.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace fusetrack {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

thread_local Tape* g_active_tape = nullptr;

void require_2d(const Tensor& t, const char* op) {
  if (!t.defined() || t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorStorage>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->value.size(); }
std::size_t Tensor::dim(std::size_t i) const {
  if (i >= impl_->shape.size()) throw RangeError("dimension index out of range");
  return impl_->shape[i];
}
std::size_t Tensor::rows() const { return impl_->shape[0]; }
std::size_t Tensor::cols() const { return size() / rows(); }
std::span<const double> Tensor::data() const { return impl_->value; }
std::span<double> Tensor::mutable_data() { return impl_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }
bool Tensor::is_leaf() const { return impl_->leaf; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return from(shape(), impl_->value, false); }

std::span<double> Tensor::grad_buffer() const {
  if (impl_->grad.size() != impl_->value.size()) impl_->grad.assign(impl_->value.size(), 0.0);
  return impl_->grad;
}

// --- Tape -------------------------------------------------------------------

RecordingScope::RecordingScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
RecordingScope::~RecordingScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

bool Tape::produced(const Tensor& t) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [&](const Node& n) { return n.output == t.impl(); });
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar tensor, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!produced(loss)) throw ContractError("backward: loss was not produced on this tape");

  for (auto& node : nodes_) node.output->grad.assign(node.output->value.size(), 0.0);
  loss.grad_buffer()[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward(it->output->grad);
  }
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::function<void(std::span<const double>)> backward, const char* op_name) {
  check_finite(values, op_name);
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  Tape* tape = g_active_tape;
  if (tape == nullptr) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return out;
  out.impl_->requires_grad = true;
  out.impl_->leaf = false;
  Tape::Node node;
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = out.impl();
  node.backward = std::move(backward);
  tape->record(std::move(node));
  return out;
}

void check_finite(std::span<const double> values, const char* op_name) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op_name) + ": produced a non-finite value");
  }
}

// --- Rng --------------------------------------------------------------------

namespace {
std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw RangeError("uniform_index over an empty range");
  return static_cast<std::size_t>(next_u64() % n);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal(double stddev) {
  double z = normal();
  while (std::abs(z) > 2.0) z = normal();
  return z * stddev;
}

Tensor Rng::truncated_normal_tensor(Shape shape, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = truncated_normal(stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

Tensor Rng::normal_tensor(Shape shape, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = normal() * stddev;
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// --- Elementwise and reductions ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g) {
                       ConstMap G(g.data(), m, n);
                       if (a.requires_grad()) {
                         MutMap(a.grad_buffer().data(), m, k).noalias() +=
                             G * ConstMap(b.data().data(), k, n).transpose();
                       }
                       if (b.requires_grad()) {
                         MutMap(b.grad_buffer().data(), k, n).noalias() +=
                             ConstMap(a.data().data(), m, k).transpose() * G;
                       }
                     },
                     "matmul");
}

namespace {
template <class F>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, F f, double sign_b,
                          bool product) {
  require_same_shape(a, b, name);
  std::vector<double> out(a.size());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b, sign_b, product](std::span<const double> g) {
                       if (a.requires_grad()) {
                         auto ga = a.grad_buffer();
                         auto vb = b.data();
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += product ? g[i] * vb[i] : g[i];
                       }
                       if (b.requires_grad()) {
                         auto gb = b.grad_buffer();
                         auto va = a.data();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gb[i] += product ? g[i] * va[i] : sign_b * g[i];
                       }
                     },
                     name);
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "add", [](double x, double y) { return x + y; }, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "sub", [](double x, double y) { return x - y; }, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, "mul", [](double x, double y) { return x * y; }, 1.0, true);
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result(a.shape(), std::move(out), {a},
                     [a, s](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                     },
                     "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return make_result(a.shape(), std::move(out), {a},
                     [a](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     },
                     "add_scalar");
}

Tensor add_row(const Tensor& a, const Tensor& v) {
  const auto n = a.cols();
  if (v.size() != n) {
    throw ShapeError("add_row: vector " + shape_str(v.shape()) + " does not match columns of " +
                     shape_str(a.shape()));
  }
  const auto m = a.rows();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto dv = v.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += dv[c];
  return make_result(a.shape(), std::move(out), {a, v},
                     [a, v, m, n](std::span<const double> g) {
                       if (a.requires_grad()) {
                         auto ga = a.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (v.requires_grad()) {
                         auto gv = v.grad_buffer();
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
                       }
                     },
                     "add_row");
}

Tensor add_tiled(const Tensor& a, const Tensor& block) {
  const auto bs = block.size();
  if (bs == 0 || a.size() % bs != 0 || a.cols() != block.cols()) {
    throw ShapeError("add_tiled: block " + shape_str(block.shape()) + " does not tile " +
                     shape_str(a.shape()));
  }
  const auto reps = a.size() / bs;
  std::vector<double> out(a.data().begin(), a.data().end());
  auto db = block.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < bs; ++i) out[r * bs + i] += db[i];
  return make_result(a.shape(), std::move(out), {a, block},
                     [a, block, reps, bs](std::span<const double> g) {
                       if (a.requires_grad()) {
                         auto ga = a.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (block.requires_grad()) {
                         auto gb = block.grad_buffer();
                         for (std::size_t r = 0; r < reps; ++r)
                           for (std::size_t i = 0; i < bs; ++i) gb[i] += g[r * bs + i];
                       }
                     },
                     "add_tiled");
}

Tensor sum(const Tensor& a) {
  const double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  return make_result({1}, {s}, {a},
                     [a](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (auto& x : ga) x += g[0];
                     },
                     "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax_rows(const Tensor& a) {
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = da.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(row[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= z;
  }
  std::vector<double> saved = out;
  return make_result(a.shape(), std::move(out), {a},
                     [a, m, n, saved = std::move(saved)](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t r = 0; r < m; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * saved[r * n + c];
                         for (std::size_t c = 0; c < n; ++c)
                           ga[r * n + c] += saved[r * n + c] * (g[r * n + c] - dot);
                       }
                     },
                     "softmax_rows");
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const auto m = a.rows(), n = a.cols();
  if (gain.size() != n || bias.size() != n) {
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(n));
  }
  std::vector<double> xhat(a.size()), inv_std(m), out(a.size());
  auto da = a.data(), dg = gain.data(), db = bias.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = da.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * dg[c] + db[c];
    }
  }
  return make_result(a.shape(), std::move(out), {a, gain, bias},
                     [a, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         std::span<const double> g) {
                       auto dg = gain.data();
                       if (gain.requires_grad() || bias.requires_grad()) {
                         std::span<double> gg, gb;
                         if (gain.requires_grad()) gg = gain.grad_buffer();
                         if (bias.requires_grad()) gb = bias.grad_buffer();
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) {
                             if (!gg.empty()) gg[c] += g[r * n + c] * xhat[r * n + c];
                             if (!gb.empty()) gb[c] += g[r * n + c];
                           }
                       }
                       if (a.requires_grad()) {
                         auto ga = a.grad_buffer();
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (std::size_t r = 0; r < m; ++r) {
                           double s1 = 0.0, s2 = 0.0;
                           for (std::size_t c = 0; c < n; ++c) {
                             const double dx = g[r * n + c] * dg[c];
                             s1 += dx;
                             s2 += dx * xhat[r * n + c];
                           }
                           for (std::size_t c = 0; c < n; ++c) {
                             const double dx = g[r * n + c] * dg[c];
                             ga[r * n + c] += inv_std[r] * (dx - inv_n * s1 - xhat[r * n + c] * inv_n * s2);
                           }
                         }
                       }
                     },
                     "layer_norm");
}

Tensor gelu(const Tensor& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c3 = 0.044715;
  std::vector<double> out(a.size());
  auto th = std::make_shared<std::vector<double>>(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = da[i];
    const double t = std::tanh(k * (x + c3 * x * x * x));
    (*th)[i] = t;
    out[i] = 0.5 * x * (1.0 + t);
  }
  return make_result(a.shape(), std::move(out), {a},
                     [a, th](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       auto da = a.data();
                       const auto& tv = *th;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double x = da[i];
                         const double t = tv[i];
                         const double du = k * (1.0 + 3.0 * c3 * x * x);
                         ga[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                       }
                     },
                     "gelu");
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] > 0.0 ? da[i] : 0.0;
  return make_result(a.shape(), std::move(out), {a},
                     [a](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       auto da = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (da[i] > 0.0) ga[i] += g[i];
                     },
                     "relu");
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = da[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  std::vector<double> saved = out;
  return make_result(a.shape(), std::move(out), {a},
                     [a, saved = std::move(saved)](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * saved[i] * (1.0 - saved[i]);
                     },
                     "sigmoid");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> out(a.size());
  auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(da[i], lo, hi);
  return make_result(a.shape(), std::move(out), {a},
                     [a, lo, hi](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       auto da = a.data();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (da[i] > lo && da[i] < hi) ga[i] += g[i];
                     },
                     "clamp");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [a](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     },
                     "reshape");
}

// --- Structural ops ---------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const auto n = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ (" + shape_str(p.shape()) + ")");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  // make_result takes an initializer_list; record manually for the variadic case.
  Tensor result = make_result({total, n}, std::move(out), {}, nullptr, "concat_rows");
  Tape* tape = active_tape();
  const bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape && needs) {
    result.impl()->requires_grad = true;
    result.impl()->leaf = false;
    Tape::Node node;
    for (const auto& p : parts) node.inputs.push_back(p.impl());
    node.output = result.impl();
    node.backward = [parts](std::span<const double> g) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.size();
      }
    };
    tape->record(std::move(node));
  }
  return result;
}

Tensor slice_rows(const Tensor& a, RowRange range) {
  require_2d(a, "slice_rows");
  if (range.begin >= range.end || range.end > a.rows()) {
    throw RangeError("slice_rows: range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                     ") outside " + std::to_string(a.rows()) + " rows");
  }
  const auto n = a.cols();
  std::vector<double> out(a.data().begin() + range.begin * n, a.data().begin() + range.end * n);
  return make_result({range.size(), n}, std::move(out), {a},
                     [a, range, n](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[range.begin * n + i] += g[i];
                     },
                     "slice_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const auto m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ (" + shape_str(p.shape()) + ")");
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto n = p.cols();
    auto d = p.data();
    for (std::size_t r = 0; r < m; ++r)
      std::copy(d.begin() + r * n, d.begin() + (r + 1) * n, out.begin() + r * total + off);
    off += n;
  }
  Tensor result = make_result({m, total}, std::move(out), {}, nullptr, "concat_cols");
  Tape* tape = active_tape();
  const bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape && needs) {
    result.impl()->requires_grad = true;
    result.impl()->leaf = false;
    Tape::Node node;
    for (const auto& p : parts) node.inputs.push_back(p.impl());
    node.output = result.impl();
    node.backward = [parts, m, total](std::span<const double> g) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const auto n = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gp[r * n + c] += g[r * total + off + c];
        }
        off += n;
      }
    };
    tape->record(std::move(node));
  }
  return result;
}

Tensor slice_cols(const Tensor& a, RowRange range) {
  require_2d(a, "slice_cols");
  const auto m = a.rows(), n = a.cols();
  if (range.begin >= range.end || range.end > n) {
    throw RangeError("slice_cols: range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                     ") outside " + std::to_string(n) + " columns");
  }
  const auto w = range.size();
  std::vector<double> out(m * w);
  auto d = a.data();
  for (std::size_t r = 0; r < m; ++r)
    std::copy(d.begin() + r * n + range.begin, d.begin() + r * n + range.end, out.begin() + r * w);
  return make_result({m, w}, std::move(out), {a},
                     [a, range, m, n, w](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < w; ++c) ga[r * n + range.begin + c] += g[r * w + c];
                     },
                     "slice_cols");
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  const auto m = a.rows(), n = a.cols();
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  std::vector<double> out(index.size() * n);
  auto d = a.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m) throw RangeError("gather_rows: row " + std::to_string(index[i]) + " out of range");
    std::copy(d.begin() + index[i] * n, d.begin() + (index[i] + 1) * n, out.begin() + i * n);
  }
  Shape shape = a.shape();
  shape[0] = index.size();
  return make_result(std::move(shape), std::move(out), {a},
                     [a, index = std::move(index), n](std::span<const double> g) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < index.size(); ++i)
                         for (std::size_t c = 0; c < n; ++c) ga[index[i] * n + c] += g[i * n + c];
                     },
                     "gather_rows");
}

// --- Attention --------------------------------------------------------------

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                      std::size_t heads) {
  require_2d(q, "attention_core");
  require_same_shape(q, k, "attention_core");
  require_same_shape(q, v, "attention_core");
  const auto rows = q.rows(), dim = q.cols();
  if (batch == 0 || rows % batch != 0) throw ShapeError("attention_core: rows not divisible by batch");
  if (heads == 0 || dim % heads != 0) throw ShapeError("attention_core: heads must divide the model dim");
  const auto tokens = rows / batch, dk = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  // Attention weights per (sample, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(batch * heads * tokens * tokens);
  std::vector<double> out(rows * dim);
  RowMat scores(tokens, tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto base = b * tokens * dim + h * dk;
      ConstStrided Q(q.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
      ConstStrided K(k.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
      ConstStrided V(v.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
      scores.noalias() = (Q * K.transpose()) * inv_sqrt;
      MutMap A(probs->data() + (b * heads + h) * tokens * tokens, tokens, tokens);
      for (std::size_t r = 0; r < tokens; ++r) {
        // Scalar loops keep the summation order independent of alignment.
        const double mx = scores.row(r).maxCoeff();
        double total = 0.0;
        for (std::size_t c = 0; c < tokens; ++c) total += A(r, c) = std::exp(scores(r, c) - mx);
        for (std::size_t c = 0; c < tokens; ++c) A(r, c) /= total;
      }
      MutStrided O(out.data() + base, tokens, dk, Eigen::OuterStride<>(dim));
      O.noalias() = A * V;
    }
  }
  return make_result(
      {rows, dim}, std::move(out), {q, k, v},
      [q, k, v, probs, batch, heads, tokens, dim, dk, inv_sqrt](std::span<const double> g) {
        RowMat dA(tokens, tokens), dS(tokens, tokens);
        std::span<double> gq, gk, gv;
        if (q.requires_grad()) gq = q.grad_buffer();
        if (k.requires_grad()) gk = k.grad_buffer();
        if (v.requires_grad()) gv = v.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const auto base = b * tokens * dim + h * dk;
            ConstStrided Q(q.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
            ConstStrided K(k.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
            ConstStrided V(v.data().data() + base, tokens, dk, Eigen::OuterStride<>(dim));
            ConstStrided G(g.data() + base, tokens, dk, Eigen::OuterStride<>(dim));
            ConstMap A(probs->data() + (b * heads + h) * tokens * tokens, tokens, tokens);
            if (!gv.empty()) {
              MutStrided GV(gv.data() + base, tokens, dk, Eigen::OuterStride<>(dim));
              GV.noalias() += A.transpose() * G;
            }
            if (gq.empty() && gk.empty()) continue;
            dA.noalias() = G * V.transpose();
            for (std::size_t r = 0; r < tokens; ++r) {
              double dot = 0.0;
              for (std::size_t c = 0; c < tokens; ++c) dot += dA(r, c) * A(r, c);
              for (std::size_t c = 0; c < tokens; ++c) dS(r, c) = A(r, c) * (dA(r, c) - dot);
            }
            if (!gq.empty()) {
              MutStrided GQ(gq.data() + base, tokens, dk, Eigen::OuterStride<>(dim));
              GQ.noalias() += (dS * K) * inv_sqrt;
            }
            if (!gk.empty()) {
              MutStrided GK(gk.data() + base, tokens, dk, Eigen::OuterStride<>(dim));
              GK.noalias() += (dS.transpose() * Q) * inv_sqrt;
            }
          }
        }
      },
      "attention_core");
}

// --- Convolution helpers ----------------------------------------------------

std::size_t conv_out_side(std::size_t side, std::size_t stride) { return (side - 1) / stride + 1; }

Tensor im2col3x3(const Tensor& x, std::size_t batch, std::size_t side, std::size_t stride) {
  require_2d(x, "im2col3x3");
  if (stride == 0) throw ShapeError("im2col3x3: stride must be positive");
  if (x.rows() != batch * side * side) {
    throw ShapeError("im2col3x3: " + shape_str(x.shape()) + " is not " + std::to_string(batch) + " grids of " +
                     std::to_string(side) + "x" + std::to_string(side));
  }
  const auto c = x.cols();
  const auto os = conv_out_side(side, stride);
  const auto width = 9 * c;
  std::vector<double> out(batch * os * os * width, 0.0);
  auto d = x.data();
  const auto iside = static_cast<long>(side);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < os; ++oy)
      for (std::size_t ox = 0; ox < os; ++ox) {
        double* dst = out.data() + ((b * os + oy) * os + ox) * width;
        for (long ky = 0; ky < 3; ++ky)
          for (long kx = 0; kx < 3; ++kx) {
            const long iy = static_cast<long>(oy * stride) + ky - 1;
            const long ix = static_cast<long>(ox * stride) + kx - 1;
            if (iy < 0 || ix < 0 || iy >= iside || ix >= iside) continue;
            const double* src = d.data() + ((b * side + iy) * side + ix) * c;
            std::copy(src, src + c, dst + (ky * 3 + kx) * c);
          }
      }
  return make_result({batch * os * os, width}, std::move(out), {x},
                     [x, batch, side, stride, os, c, width, iside](std::span<const double> g) {
                       auto gx = x.grad_buffer();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t oy = 0; oy < os; ++oy)
                           for (std::size_t ox = 0; ox < os; ++ox) {
                             const double* src = g.data() + ((b * os + oy) * os + ox) * width;
                             for (long ky = 0; ky < 3; ++ky)
                               for (long kx = 0; kx < 3; ++kx) {
                                 const long iy = static_cast<long>(oy * stride) + ky - 1;
                                 const long ix = static_cast<long>(ox * stride) + kx - 1;
                                 if (iy < 0 || ix < 0 || iy >= iside || ix >= iside) continue;
                                 double* dst = gx.data() + ((b * side + iy) * side + ix) * c;
                                 const double* s = src + (ky * 3 + kx) * c;
                                 for (std::size_t i = 0; i < c; ++i) dst[i] += s[i];
                               }
                           }
                     },
                     "im2col3x3");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  require_2d(x, "batch_norm");
  const auto n = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batch_norm: parameter length must equal " + std::to_string(c));
  }
  std::vector<double> mu(c, 0.0), inv_std(c), xhat(x.size()), out(x.size());
  auto d = x.data();
  if (training) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += d[r * c + j];
    for (auto& m : mu) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) var[j] += (d[r * c + j] - mu[j]) * (d[r * c + j] - mu[j]);
    for (auto& v : var) v /= static_cast<double>(n);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t j = 0; j < c; ++j) {
      inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
      rm[j] = (1.0 - state.momentum) * rm[j] + state.momentum * mu[j];
      rv[j] = (1.0 - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + state.eps);
    }
  }
  auto dg = gamma.data(), db = beta.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (d[r * c + j] - mu[j]) * inv_std[j];
      out[r * c + j] = xhat[r * c + j] * dg[j] + db[j];
    }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, c, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g) {
        auto dg = gamma.data();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g[r * c + j];
            sum_gx[j] += g[r * c + j] * xhat[r * c + j];
          }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad_buffer();
          for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
        }
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              const double gy = g[r * c + j] * dg[j];
              if (training) {
                gx[r * c + j] += inv_std[j] * (gy - dg[j] * inv_n * (sum_g[j] + xhat[r * c + j] * sum_gx[j]));
              } else {
                gx[r * c + j] += inv_std[j] * gy;
              }
            }
        }
      },
      "batch_norm");
}

Tensor mean_pool_rows(const Tensor& x, std::size_t groups) {
  require_2d(x, "mean_pool_rows");
  if (groups == 0 || x.rows() % groups != 0) throw ShapeError("mean_pool_rows: rows not divisible by groups");
  const auto per = x.rows() / groups, c = x.cols();
  const double inv = 1.0 / static_cast<double>(per);
  std::vector<double> out(groups * c, 0.0);
  auto d = x.data();
  for (std::size_t gi = 0; gi < groups; ++gi)
    for (std::size_t r = 0; r < per; ++r)
      for (std::size_t j = 0; j < c; ++j) out[gi * c + j] += d[(gi * per + r) * c + j] * inv;
  return make_result({groups, c}, std::move(out), {x},
                     [x, groups, per, c, inv](std::span<const double> g) {
                       auto gx = x.grad_buffer();
                       for (std::size_t gi = 0; gi < groups; ++gi)
                         for (std::size_t r = 0; r < per; ++r)
                           for (std::size_t j = 0; j < c; ++j) gx[(gi * per + r) * c + j] += g[gi * c + j] * inv;
                     },
                     "mean_pool_rows");
}

}  // namespace fusetrack
