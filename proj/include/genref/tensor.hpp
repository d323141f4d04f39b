#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace genref {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when a primitive receives operands whose shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Receives the gradient flowing into this node and accumulates into the
// gradient buffers of its inputs. A null buffer means that input needs none.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad,
                                      std::span<std::vector<double>*> input_grads)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles. Copies share the underlying node, so a
/// Tensor is a cheap handle; operations build a graph for reverse-mode AD.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t ndim() const { return shape().size(); }
  // Matrix view: an N-d tensor is (product of leading dims) x (last dim).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Leaf mutation for optimizers and finite differences. Must not be used
  // while a graph depending on this tensor is still going to be differentiated.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  const char* op() const;
  // Identity of the underlying node; equal for copies of the same handle.
  const void* id() const { return node_.get(); }

  // Returns a new leaf holding a copy of the value, cut from any graph.
  Tensor detach(bool requires_grad = false) const;

  const detail::NodePtr& node() const { return node_; }
  static Tensor wrap(detail::NodePtr node);

 private:
  detail::NodePtr node_;
};

/// Gradients of a scalar loss with respect to every reachable leaf that
/// requires grad, keyed by tensor identity.
class GradientMap {
 public:
  bool contains(const Tensor& param) const;
  // Gradient of `param`; a zero tensor of matching shape when unreachable.
  Tensor operator[](const Tensor& param) const;
  // Raw view of the gradient of `param`; empty when unreachable.
  std::span<const double> view(const Tensor& param) const;
  std::size_t size() const { return grads_.size(); }

  void set(const void* id, Shape shape, std::vector<double> grad);

 private:
  struct Entry {
    Shape shape;
    std::vector<double> grad;
  };
  std::unordered_map<const void*, Entry> grads_;
};

GradientMap backward(const Tensor& loss);

/// While alive on this thread, operations record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

enum class Primitive {
  matmul,
  add,
  concat,
  elementwise_tanh,
  elementwise_sigmoid,
  elementwise_mul,
  softmax,
  log,
  mean,
  slice,
};

const char* primitive_name(Primitive kind);

struct SliceArgs {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Uniform entry point over the core primitive set. `slice` takes its range
/// from `slice_args` and operates on the last axis.
Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs, SliceArgs slice_args = {});

// Matrix product with numpy-style handling of 1-d operands.
Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise binary ops. `b` may also broadcast as a row ([cols] or [1, cols])
// or as a column ([rows, 1]) over the matrix view of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Concatenation along the last axis; all parts share the leading extents.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Row-wise over the last axis, max-shifted.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor slice(const Tensor& a, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& a, Shape shape);

// out[i] = table[ids[i]]; shape [ids.size(), cols].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// out[r] = a[r, index[r]]; shape [rows].
Tensor pick(const Tensor& a, std::span<const std::size_t> index);
// Each row repeated `times` consecutively: [r, c] -> [r * times, c].
Tensor repeat_rows(const Tensor& a, std::size_t times);
// Average of consecutive row groups: [r * group, c] -> [r, c].
Tensor mean_row_groups(const Tensor& a, std::size_t group);
// Convex combination per sample: weights [n, k], rows [n * k, d] -> [n, d].
Tensor weighted_row_sum(const Tensor& weights, const Tensor& rows);
// Row r taken from `if_true` when keep[r], else from `if_false`.
Tensor select_rows(const std::vector<bool>& keep, const Tensor& if_true, const Tensor& if_false);

struct GradCheckResult {
  // Worst over parameters of |g_a - g_n| / max(|g_a|, |g_n|, 1e-8), where g_a
  // and g_n are the analytic and numeric gradients of one parameter tensor
  // and |.| is the L2 norm.
  double max_relative_error = 0.0;
  // Same ratio taken per scalar element. Near-zero elements sit at the
  // round-off floor of the finite differences, so this is diagnostic only.
  double max_elementwise_error = 0.0;
  std::size_t worst_param = 0;  // index into params of max_relative_error
  std::size_t elements = 0;
};

/// backward() against central differences (five-point stencil) for every
/// element of `params`.
GradCheckResult grad_check_detail(const std::function<Tensor()>& scalar_fn, std::span<const Tensor> params,
                                  double epsilon = 1e-5);

/// grad_check_detail(...).max_relative_error
double grad_check(const std::function<Tensor()>& scalar_fn, std::span<const Tensor> params,
                  double epsilon = 1e-5);

}  // namespace genref
