#pragma once

// Dense 64-bit float tensors with tape-based reverse-mode differentiation.
// Graphs are recorded on an explicit GradientTape that is active for the
// current thread; without an active tape every op is a plain forward
// computation, which is the inference path for frozen models.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmlego/errors.hpp"

namespace mmlego {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass touches this node
  bool requires_grad = false;
  std::uint64_t serial = 0;  // creation order, used for tape sanity checks

  std::size_t numel() const { return values.size(); }
  void materialize_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from_values(const Shape& shape, std::vector<double> values);
  // i.i.d. normal(mean, stddev) draws in row-major order.
  static Tensor randn(const Shape& shape, std::mt19937_64& rng,
                      double stddev = 1.0, double mean = 0.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Rank-2 accessors; throw ShapeMismatchError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Direct mutation is reserved for optimizers and loaders; recorded graphs
  // must never mutate their inputs.
  std::span<double> mutable_values();
  double item() const;  // numel()==1
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of values; the clone never shares storage and carries no grad.
  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Records ops while alive; one tape per thread at a time. Destroying the
// tape releases the recorded graph.
class GradientTape {
 public:
  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Extension point for ops with custom backward rules. `backward` reads the
  // output nodes' grads (possibly empty == zero) and accumulates into the
  // input nodes' grads.
  void record(const std::vector<Tensor>& inputs,
              const std::vector<Tensor>& outputs,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss)=1 and walks the tape in reverse. Grads accumulate
  // across repeated calls until zero_grad() is used.
  void backward(const Tensor& loss);

  std::size_t op_count() const { return ops_.size(); }
  // Every op's inputs must have been created before its outputs.
  bool topologically_ordered() const;

  static GradientTape* active();

 private:
  struct Op {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::vector<std::shared_ptr<detail::TensorNode>> outputs;
    std::function<void()> backward;
  };
  std::vector<Op> ops_;
};

// Forward results are checked for NaN/Inf and raise NumericError when the
// check trips. The toggle exists for hot loops that have already validated
// their inputs.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- elementwise / arithmetic ----
// Binary ops accept equal shapes, or a right operand whose shape is a
// suffix of the left's (expanded along the leading axes). Anything else is
// a ShapeMismatchError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// SELU with the self-normalizing constants lambda=1.0507009873554805,
// alpha=1.6732632423543772.
Tensor selu(const Tensor& a);

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

// ---- reductions / normalization ----
Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}
// Numerically stabilized softmax along `axis` (negative counts from the
// back); rows sum to one.
Tensor softmax(const Tensor& a, int axis = -1);
// Normalizes over the last axis with biased variance, then applies the
// affine gain/bias (both shaped like the last axis).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- regularization ----
// Inverted dropout: identity when !training or p==0; otherwise keeps each
// element with probability 1-p and rescales by 1/(1-p).
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng);
// Alpha dropout for SELU stacks: dropped entries are set to the SELU
// saturation value and the result is affinely rescaled to preserve zero
// mean / unit variance of standardized inputs.
Tensor alpha_dropout(const Tensor& x, double p, bool training,
                     std::mt19937_64* rng);

}  // namespace mmlego
