#include "mmlego/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mmlego {

namespace {

thread_local GradientTape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_serial{1};
std::atomic<bool> g_finite_checks{true};

constexpr double kSeluLambda = 1.0507009873554805;
constexpr double kSeluAlpha = 1.6732632423543772;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

std::shared_ptr<detail::TensorNode> make_node(Shape shape,
                                              std::vector<double> values) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->serial = g_serial.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void ensure_finite(const std::vector<double>& v, const char* op) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         op + "'");
    }
  }
}

bool on_grad_path(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Right-operand shape must equal the left's or be a suffix of it. In
// row-major order the suffix-broadcast index is simply flat % numel(b).
void check_suffix_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (b.size() > a.size()) {
    throw ShapeMismatchError(std::string(op) + ": " + shape_str(b) +
                             " does not broadcast onto " + shape_str(a));
  }
  const std::size_t offset = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[offset + i] != b[i]) {
      throw ShapeMismatchError(std::string(op) + ": " + shape_str(b) +
                               " does not broadcast onto " + shape_str(a));
    }
  }
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeMismatchError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_str(t.shape()));
  }
}

Tensor finish_unary(const Tensor& a, Shape shape, std::vector<double> values,
                    const char* op,
                    std::function<void(const std::vector<double>& gout,
                                       std::vector<double>& gin)> pullback) {
  ensure_finite(values, op);
  Tensor out = Tensor::wrap(make_node(std::move(shape), std::move(values)));
  if (on_grad_path({&a})) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    g_active_tape->record({a}, {out}, [an, on, pb = std::move(pullback)]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      pb(on->grad, an->grad);
    });
  }
  return out;
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind,
                 const char* op) {
  check_suffix_broadcast(a.shape(), b.shape(), op);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t nb = bv.size();
  std::vector<double> out(av.size());
  switch (kind) {
    case BinKind::Add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % nb];
      break;
    case BinKind::Sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i % nb];
      break;
    case BinKind::Mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % nb];
      break;
    case BinKind::Div:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i % nb];
      break;
  }
  ensure_finite(out, op);
  Tensor result = Tensor::wrap(make_node(a.shape(), std::move(out)));
  if (on_grad_path({&a, &b})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    g_active_tape->record({a, b}, {result}, [an, bn, on, kind]() {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      const std::size_t nb = bn->values.size();
      if (an->requires_grad) {
        an->materialize_grad();
        switch (kind) {
          case BinKind::Add:
          case BinKind::Sub:
            for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < g.size(); ++i)
              an->grad[i] += g[i] * bn->values[i % nb];
            break;
          case BinKind::Div:
            for (std::size_t i = 0; i < g.size(); ++i)
              an->grad[i] += g[i] / bn->values[i % nb];
            break;
        }
      }
      if (bn->requires_grad) {
        bn->materialize_grad();
        switch (kind) {
          case BinKind::Add:
            for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i % nb] += g[i];
            break;
          case BinKind::Sub:
            for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i % nb] -= g[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < g.size(); ++i)
              bn->grad[i % nb] += g[i] * an->values[i];
            break;
          case BinKind::Div:
            for (std::size_t i = 0; i < g.size(); ++i) {
              const double bv = bn->values[i % nb];
              bn->grad[i % nb] -= g[i] * an->values[i] / (bv * bv);
            }
            break;
        }
      }
    });
  }
  return result;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(const Shape& shape) {
  return wrap(make_node(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return wrap(make_node(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_values(const Shape& shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeMismatchError("from_values: " + shape_str(shape) +
                             " does not hold " + std::to_string(values.size()) +
                             " elements");
  }
  return wrap(make_node(shape, std::move(values)));
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, double stddev,
                     double mean) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return wrap(make_node(shape, std::move(v)));
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::numel() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeMismatchError("item: tensor has " + std::to_string(numel()) +
                             " elements");
  }
  return node_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  require_rank2(*this, "at");
  return node_->values[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) {
    throw Error("grad: no gradient has been accumulated for this tensor");
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
  return wrap(make_node(node_->shape, node_->values));
}

// ---------------------------------------------------------- GradientTape

GradientTape::GradientTape() {
  if (g_active_tape != nullptr) {
    throw Error("GradientTape: a tape is already active on this thread");
  }
  g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = nullptr; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::record(const std::vector<Tensor>& inputs,
                          const std::vector<Tensor>& outputs,
                          std::function<void()> backward) {
  Op op;
  op.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) op.inputs.push_back(t.node());
  op.outputs.reserve(outputs.size());
  for (const Tensor& t : outputs) op.outputs.push_back(t.node());
  op.backward = std::move(backward);
  ops_.push_back(std::move(op));
}

void GradientTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw NonScalarLossError("backward: loss has " +
                             std::to_string(loss.numel()) + " elements");
  }
  // Intermediate (op-output) grads are working buffers for this traversal;
  // only leaf grads persist and accumulate across calls.
  for (Op& op : ops_) {
    for (auto& out : op.outputs) out->grad.clear();
  }
  auto ln = loss.node();
  ln->materialize_grad();
  ln->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    bool any_grad = false;
    for (const auto& out : it->outputs) {
      if (!out->grad.empty()) {
        any_grad = true;
        break;
      }
    }
    if (any_grad) it->backward();
  }
}

bool GradientTape::topologically_ordered() const {
  for (const Op& op : ops_) {
    std::uint64_t min_out = UINT64_MAX;
    for (const auto& out : op.outputs) min_out = std::min(min_out, out->serial);
    for (const auto& in : op.inputs) {
      if (in->serial >= min_out) return false;
    }
  }
  return true;
}

void set_finite_checks(bool enabled) {
  g_finite_checks.store(enabled, std::memory_order_relaxed);
}

bool finite_checks_enabled() {
  return g_finite_checks.load(std::memory_order_relaxed);
}

// ------------------------------------------------------------------ ops

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Add, "add");
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Sub, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Mul, "mul");
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, BinKind::Div, "div");
}

Tensor neg(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = -x;
  return finish_unary(a, a.shape(), std::move(v), "neg",
                      [](const std::vector<double>& g, std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
                      });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x += c;
  return finish_unary(a, a.shape(), std::move(v), "add_scalar",
                      [](const std::vector<double>& g, std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                      });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x *= c;
  return finish_unary(a, a.shape(), std::move(v), "mul_scalar",
                      [c](const std::vector<double>& g, std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += c * g[i];
                      });
}

Tensor exp(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = std::exp(x);
  auto saved = v;
  return finish_unary(a, a.shape(), std::move(v), "exp",
                      [saved = std::move(saved)](const std::vector<double>& g,
                                                 std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * saved[i];
                      });
}

Tensor log(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  std::vector<double> x0(v);
  for (double& x : v) x = std::log(x);
  return finish_unary(a, a.shape(), std::move(v), "log",
                      [x0 = std::move(x0)](const std::vector<double>& g,
                                           std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] / x0[i];
                      });
}

Tensor sqrt(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = std::sqrt(x);
  auto saved = v;
  return finish_unary(a, a.shape(), std::move(v), "sqrt",
                      [saved = std::move(saved)](const std::vector<double>& g,
                                                 std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * 0.5 / saved[i];
                      });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x = std::tanh(x);
  auto saved = v;
  return finish_unary(a, a.shape(), std::move(v), "tanh",
                      [saved = std::move(saved)](const std::vector<double>& g,
                                                 std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * (1.0 - saved[i] * saved[i]);
                      });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) {
    if (x >= 0.0) {
      x = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      x = e / (1.0 + e);
    }
  }
  auto saved = v;
  return finish_unary(a, a.shape(), std::move(v), "sigmoid",
                      [saved = std::move(saved)](const std::vector<double>& g,
                                                 std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * saved[i] * (1.0 - saved[i]);
                      });
}

Tensor selu(const Tensor& a) {
  std::vector<double> x0(a.values().begin(), a.values().end());
  std::vector<double> v(x0.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = x0[i];
    v[i] = x > 0.0 ? kSeluLambda * x
                   : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
  }
  return finish_unary(a, a.shape(), std::move(v), "selu",
                      [x0 = std::move(x0)](const std::vector<double>& g,
                                           std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const double x = x0[i];
                          const double d =
                              x > 0.0 ? kSeluLambda
                                      : kSeluLambda * kSeluAlpha * std::exp(x);
                          gi[i] += g[i] * d;
                        }
                      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeMismatchError("matmul: inner dimensions disagree, " +
                             shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  }
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = bv + kk * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  Tensor result = Tensor::wrap(make_node({m, n}, std::move(out)));
  if (on_grad_path({&a, &b})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    g_active_tape->record({a, b}, {result}, [an, bn, on, m, k, n]() {
      if (on->grad.empty()) return;
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->materialize_grad();
        // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = bn->values.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            an->grad[i * k + kk] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        bn->materialize_grad();
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = an->values.data() + i * k;
          const double* grow = g + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            double* brow = bn->grad.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += aik * grow[j];
          }
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tensor result = Tensor::wrap(make_node({n, m}, std::move(out)));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record({a}, {result}, [an, on, m, n]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          an->grad[i * n + j] += on->grad[j * m + i];
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeMismatchError("reshape: cannot view " + shape_str(a.shape()) +
                             " as " + shape_str(shape));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor result = Tensor::wrap(make_node(shape, std::move(v)));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record({a}, {result}, [an, on]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (start + count > n) {
    throw ShapeMismatchError("slice_cols: [" + std::to_string(start) + ", " +
                             std::to_string(start + count) +
                             ") out of range for " + shape_str(a.shape()));
  }
  const auto av = a.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j)
      out[i * count + j] = av[i * n + start + j];
  Tensor result = Tensor::wrap(make_node({m, count}, std::move(out)));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record({a}, {result}, [an, on, m, n, start, count]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j)
          an->grad[i * n + start + j] += on->grad[i * count + j];
    });
  }
  return result;
}

namespace {

Tensor concat_impl(const std::vector<Tensor>& parts, bool along_rows,
                   const char* op) {
  if (parts.empty()) throw EmptyInputError(std::string(op) + ": no tensors");
  for (const Tensor& t : parts) require_rank2(t, op);
  std::size_t rows = parts[0].shape()[0], cols = parts[0].shape()[1];
  std::size_t total = along_rows ? rows : cols;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (along_rows ? s[1] != cols : s[0] != rows) {
      throw ShapeMismatchError(std::string(op) + ": mismatched shapes");
    }
    total += along_rows ? s[0] : s[1];
  }
  Shape out_shape = along_rows ? Shape{total, cols} : Shape{rows, total};
  std::vector<double> out(shape_numel(out_shape));
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    const auto tv = t.values();
    if (along_rows) {
      std::copy(tv.begin(), tv.end(), out.begin() + off * cols);
      off += t.shape()[0];
    } else {
      const std::size_t tc = t.shape()[1];
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < tc; ++j)
          out[i * total + off + j] = tv[i * tc + j];
      off += tc;
    }
  }
  Tensor result = Tensor::wrap(make_node(out_shape, std::move(out)));
  bool needs_grad = false;
  if (g_active_tape != nullptr) {
    for (const Tensor& t : parts) needs_grad = needs_grad || t.requires_grad();
  }
  if (needs_grad) {
    result.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode>> in_nodes;
    for (const Tensor& t : parts) in_nodes.push_back(t.node());
    auto on = result.node();
    g_active_tape->record(parts, {result},
                          [in_nodes, on, rows, total, along_rows]() {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& in : in_nodes) {
        const std::size_t tr = in->shape[0], tc = in->shape[1];
        if (in->requires_grad) {
          in->materialize_grad();
          if (along_rows) {
            const std::size_t base = off * tc;
            for (std::size_t i = 0; i < in->grad.size(); ++i)
              in->grad[i] += on->grad[base + i];
          } else {
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < tc; ++j)
                in->grad[i * tc + j] += on->grad[i * total + off + j];
          }
        }
        off += along_rows ? tr : tc;
      }
    });
  }
  return result;
}

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  return concat_impl(parts, true, "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  return concat_impl(parts, false, "concat_cols");
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor result = Tensor::wrap(make_node({1}, {acc}));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record({a}, {result}, [an, on]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      for (double& g : an->grad) g += on->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor result = Tensor::wrap(make_node({1}, {acc * inv}));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record({a}, {result}, [an, on, inv]() {
      if (on->grad.empty() || !an->requires_grad) return;
      an->materialize_grad();
      for (double& g : an->grad) g += on->grad[0] * inv;
    });
  }
  return result;
}

Tensor softmax(const Tensor& a, int axis) {
  const std::size_t r = a.rank();
  if (axis < 0) axis += static_cast<int>(r);
  if (axis < 0 || static_cast<std::size_t>(axis) >= r) {
    throw ShapeMismatchError("softmax: axis out of range for " +
                             shape_str(a.shape()));
  }
  const std::size_t n = a.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < static_cast<std::size_t>(axis); ++i)
    outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < r; ++i) inner *= a.shape()[i];

  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = av[base];
      for (std::size_t i = 1; i < n; ++i)
        mx = std::max(mx, av[base + i * inner]);
      double denom = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(av[base + i * inner] - mx);
        out[base + i * inner] = e;
        denom += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= denom;
    }
  }
  ensure_finite(out, "softmax");
  auto saved = out;
  Tensor result = Tensor::wrap(make_node(a.shape(), std::move(out)));
  if (on_grad_path({&a})) {
    result.set_requires_grad(true);
    auto an = a.node();
    auto on = result.node();
    g_active_tape->record(
        {a}, {result}, [an, on, outer, inner, n, saved = std::move(saved)]() {
          if (on->grad.empty() || !an->requires_grad) return;
          an->materialize_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
              const std::size_t base = o * n * inner + in;
              double dot = 0.0;
              for (std::size_t i = 0; i < n; ++i)
                dot += on->grad[base + i * inner] * saved[base + i * inner];
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t idx = base + i * inner;
                an->grad[idx] += saved[idx] * (on->grad[idx] - dot);
              }
            }
          }
        });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() < 1) throw ShapeMismatchError("layer_norm: rank-0 input");
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeMismatchError(
        "layer_norm: gain/bias must match the last axis (" +
        std::to_string(n) + ")");
  }
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / n;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = gv[j] * h + bv[j];
    }
  }
  ensure_finite(out, "layer_norm");
  Tensor result = Tensor::wrap(make_node(x.shape(), std::move(out)));
  if (on_grad_path({&x, &gain, &bias})) {
    result.set_requires_grad(true);
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto on = result.node();
    g_active_tape->record(
        {x, gain, bias}, {result},
        [xn, gn, bn, on, rows, n, xhat = std::move(xhat),
         inv_std = std::move(inv_std)]() {
          if (on->grad.empty()) return;
          const auto& g = on->grad;
          if (xn->requires_grad) {
            xn->materialize_grad();
            for (std::size_t r = 0; r < rows; ++r) {
              double m1 = 0.0, m2 = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const double gg = g[r * n + j] * gn->values[j];
                m1 += gg;
                m2 += gg * xhat[r * n + j];
              }
              m1 /= static_cast<double>(n);
              m2 /= static_cast<double>(n);
              for (std::size_t j = 0; j < n; ++j) {
                const double gg = g[r * n + j] * gn->values[j];
                xn->grad[r * n + j] +=
                    (gg - m1 - xhat[r * n + j] * m2) * inv_std[r];
              }
            }
          }
          if (gn->requires_grad) {
            gn->materialize_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j)
                gn->grad[j] += g[r * n + j] * xhat[r * n + j];
          }
          if (bn->requires_grad) {
            bn->materialize_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[r * n + j];
          }
        });
  }
  return result;
}

Tensor dropout(const Tensor& x, double p, bool training,
               std::mt19937_64* rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0, 1)");
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: training mode needs an rng");
  const double keep = 1.0 - p;
  std::bernoulli_distribution dist(keep);
  std::vector<double> scale(x.numel());
  for (double& s : scale) s = dist(*rng) ? 1.0 / keep : 0.0;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * scale[i];
  return finish_unary(x, x.shape(), std::move(out), "dropout",
                      [scale = std::move(scale)](const std::vector<double>& g,
                                                 std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * scale[i];
                      });
}

Tensor alpha_dropout(const Tensor& x, double p, bool training,
                     std::mt19937_64* rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("alpha_dropout: rate must lie in [0, 1)");
  }
  if (!training || p == 0.0) return x;
  if (rng == nullptr) {
    throw ConfigError("alpha_dropout: training mode needs an rng");
  }
  const double keep = 1.0 - p;
  const double ap = -kSeluLambda * kSeluAlpha;  // SELU negative saturation
  const double a = 1.0 / std::sqrt(keep + ap * ap * keep * (1.0 - keep));
  const double b = -a * (1.0 - keep) * ap;
  std::bernoulli_distribution dist(keep);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = dist(*rng) ? 1.0 : 0.0;
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a * (xv[i] * mask[i] + ap * (1.0 - mask[i])) + b;
  return finish_unary(x, x.shape(), std::move(out), "alpha_dropout",
                      [mask = std::move(mask), a](const std::vector<double>& g,
                                                  std::vector<double>& gi) {
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gi[i] += g[i] * a * mask[i];
                      });
}

}  // namespace mmlego
