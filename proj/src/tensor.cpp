#include "genref/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace genref {

using detail::Node;
using detail::NodePtr;

namespace {

thread_local bool t_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b, const std::string& why = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  if (!why.empty()) os << " (" << why << ")";
  throw ShapeError(os.str());
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  std::ostringstream os;
  os << op << ": invalid shape " << shape_str(a) << " (" << why << ")";
  throw ShapeError(os.str());
}

std::size_t mat_rows(const Shape& s) {
  if (s.size() <= 1) return 1;
  return shape_numel(s) / s.back();
}

std::size_t mat_cols(const Shape& s) { return s.empty() ? 1 : s.back(); }

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   detail::BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

const std::vector<double>& in_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

enum class Broadcast { same, row, column };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  const Shape& bs = b.shape();
  if ((bs.size() == 1 && bs[0] == c) || (bs.size() == 2 && bs[0] == 1 && bs[1] == c)) return Broadcast::row;
  if (bs.size() == 2 && bs[0] == r && bs[1] == 1) return Broadcast::column;
  if (a.size() == b.size() && a.ndim() <= 2 && b.ndim() <= 2 && r == 1 && mat_rows(bs) == 1) {
    return Broadcast::same;  // [n] vs [1, n]
  }
  shape_fail(op, a.shape(), bs, "no broadcast rule applies");
}

inline std::size_t bindex(Broadcast kind, std::size_t r, std::size_t c, std::size_t cols) {
  switch (kind) {
    case Broadcast::same:
      return r * cols + c;
    case Broadcast::row:
      return c;
    case Broadcast::column:
      return r;
  }
  return 0;
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const Broadcast kind = broadcast_kind(op, a, b);
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = fwd(av[r * cols + c], bv[bindex(kind, r, c, cols)]);
    }
  }
  return make_result(op, a.shape(), std::move(out), {a, b},
                     [kind, rows, cols, da, db](const Node& self, std::span<const double> g,
                                                std::span<std::vector<double>*> ig) {
                       const auto& x = in_value(self, 0);
                       const auto& y = in_value(self, 1);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t i = r * cols + c;
                           const std::size_t j = bindex(kind, r, c, cols);
                           if (ig[0]) (*ig[0])[i] += da(x[i], y[j]) * g[i];
                           if (ig[1]) (*ig[1])[j] += db(x[i], y[j]) * g[i];
                         }
                       }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  // deriv(x, y) receives the input and output element.
  return make_result(op, a.shape(), std::move(out), {a},
                     [deriv](const Node& self, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       const auto& x = in_value(self, 0);
                       auto& gx = *ig[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += deriv(x[i], self.value[i]) * g[i];
                     });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------- Tensor

Tensor Tensor::wrap(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(shape_numel(shape), value);
  return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return mat_rows(node_->shape); }
std::size_t Tensor::cols() const { return mat_cols(node_->shape); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
std::vector<double> Tensor::to_vector() const { return node_->value; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const char* Tensor::op() const { return node_->op; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), to_vector(), requires_grad); }

// ---------------------------------------------------------------- GradientMap

bool GradientMap::contains(const Tensor& param) const { return grads_.count(param.id()) != 0; }

Tensor GradientMap::operator[](const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) return Tensor::zeros(param.shape());
  return Tensor::from(it->second.shape, it->second.grad);
}

std::span<const double> GradientMap::view(const Tensor& param) const {
  auto it = grads_.find(param.id());
  if (it == grads_.end()) return {};
  return it->second.grad;
}

void GradientMap::set(const void* id, Shape shape, std::vector<double> grad) {
  grads_[id] = Entry{std::move(shape), std::move(grad)};
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  // Post-order DFS over grad-requiring nodes gives a topological order.
  std::vector<Node*> order;
  std::unordered_map<const Node*, std::size_t> index;
  {
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        index[node] = order.size();
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::vector<std::vector<double>> grads(order.size());
  grads.back().assign(1, 1.0);
  std::vector<std::vector<double>*> input_grads;
  for (std::size_t k = order.size(); k-- > 0;) {
    Node* node = order[k];
    if (grads[k].empty()) continue;
    if (node->inputs.empty()) continue;
    input_grads.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Node* in = node->inputs[i].get();
      if (!in->requires_grad) continue;
      auto& buf = grads[index.at(in)];
      if (buf.empty()) buf.assign(in->value.size(), 0.0);
      input_grads[i] = &buf;
    }
    node->backward(*node, grads[k], input_grads);
  }

  for (std::size_t k = 0; k < order.size(); ++k) {
    Node* node = order[k];
    if (!node->inputs.empty()) continue;
    auto grad = std::move(grads[k]);
    if (grad.empty()) grad.assign(node->value.size(), 0.0);
    result.set(node, node->shape, std::move(grad));
  }
  return result;
}

// ---------------------------------------------------------------- primitives

const char* primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::matmul:
      return "matmul";
    case Primitive::add:
      return "add";
    case Primitive::concat:
      return "concat";
    case Primitive::elementwise_tanh:
      return "elementwise_tanh";
    case Primitive::elementwise_sigmoid:
      return "elementwise_sigmoid";
    case Primitive::elementwise_mul:
      return "elementwise_mul";
    case Primitive::softmax:
      return "softmax";
    case Primitive::log:
      return "log";
    case Primitive::mean:
      return "mean";
    case Primitive::slice:
      return "slice";
  }
  return "unknown";
}

Tensor apply_primitive(Primitive kind, std::span<const Tensor> inputs, SliceArgs slice_args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw std::invalid_argument(std::string(primitive_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case Primitive::matmul:
      arity(2);
      return matmul(inputs[0], inputs[1]);
    case Primitive::add:
      arity(2);
      return add(inputs[0], inputs[1]);
    case Primitive::concat:
      return concat(inputs);
    case Primitive::elementwise_tanh:
      arity(1);
      return tanh(inputs[0]);
    case Primitive::elementwise_sigmoid:
      arity(1);
      return sigmoid(inputs[0]);
    case Primitive::elementwise_mul:
      arity(2);
      return mul(inputs[0], inputs[1]);
    case Primitive::softmax:
      arity(1);
      return softmax(inputs[0]);
    case Primitive::log:
      arity(1);
      return log(inputs[0]);
    case Primitive::mean:
      arity(1);
      return mean(inputs[0]);
    case Primitive::slice:
      arity(1);
      return slice(inputs[0], slice_args.start, slice_args.length);
  }
  throw std::invalid_argument("apply_primitive: unknown primitive");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() > 2 || b.ndim() > 2) shape_fail("matmul", a.shape(), b.shape(), "operands must be 1-d or 2-d");
  const bool a_vec = a.ndim() == 1;
  const bool b_vec = b.ndim() == 1;
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t n = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t nb = b.shape()[0];
  const std::size_t p = b_vec ? 1 : b.shape()[1];
  if (n != nb) shape_fail("matmul", a.shape(), b.shape(), "inner dimensions differ");

  Shape out_shape;
  if (a_vec && b_vec) {
    out_shape = {1};
  } else if (a_vec) {
    out_shape = {p};
  } else if (b_vec) {
    out_shape = {m};
  } else {
    out_shape = {m, p};
  }
  std::vector<double> out(m * p);
  MatMap(out.data(), m, p).noalias() = ConstMatMap(a.data().data(), m, n) * ConstMatMap(b.data().data(), n, p);
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [m, n, p](const Node& self, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       ConstMatMap gm(g.data(), m, p);
                       if (ig[0]) {
                         MatMap(ig[0]->data(), m, n).noalias() +=
                             gm * ConstMatMap(in_value(self, 1).data(), n, p).transpose();
                       }
                       if (ig[1]) {
                         MatMap(ig[1]->data(), n, p).noalias() +=
                             ConstMatMap(in_value(self, 0).data(), m, n).transpose() * gm;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "elementwise_mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor concat(std::initializer_list<Tensor> parts) { return concat(std::span<const Tensor>(parts.begin(), parts.size())); }

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size() && p.rows() == rows;
    for (std::size_t d = 0; ok && d + 1 < s.size(); ++d) ok = s[d] == first[d];
    if (!ok) shape_fail("concat", first, s, "leading extents differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto v = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + r * widths[i], widths[i], out.begin() + r * total + offset);
    }
    offset += widths[i];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, total, widths](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         if (ig[i]) {
                           auto& gi = *ig[i];
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t c = 0; c < widths[i]; ++c) gi[r * widths[i] + c] += g[r * total + off + c];
                           }
                         }
                         off += widths[i];
                       }
                     });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "elementwise_tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "elementwise_sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softmax(const Tensor& a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return make_result("softmax", a.shape(), std::move(out), {a},
                     [rows, cols](const Node& self, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * cols;
                         const double* gr = g.data() + r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gr[c];
                         for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (gr[c] - dot);
                       }
                     });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  return make_result("log_softmax", a.shape(), std::move(out), {a},
                     [rows, cols](const Node& self, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * cols;
                         const double* gr = g.data() + r * cols;
                         double gsum = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) gsum += gr[c];
                         for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gr[c] - std::exp(y[c]) * gsum;
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1}, {s}, {a},
                     [](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       for (double& v : *ig[0]) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double n = static_cast<double>(a.size());
  return make_result("mean", {1}, {s / n}, {a},
                     [n](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       for (double& v : *ig[0]) v += g[0] / n;
                     });
}

Tensor slice(const Tensor& a, std::size_t start, std::size_t length) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  if (length == 0 || start + length > cols) {
    shape_fail("slice", a.shape(),
               "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") on last axis");
  }
  Shape out_shape = a.shape();
  out_shape.back() = length;
  auto av = a.data();
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.begin() + r * cols + start, length, out.begin() + r * length);
  return make_result("slice", std::move(out_shape), std::move(out), {a},
                     [rows, cols, start, length](const Node&, std::span<const double> g,
                                                 std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < length; ++c) gx[r * cols + start + c] += g[r * length + c];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape, "element counts differ");
  return make_result("reshape", std::move(shape), a.to_vector(), {a},
                     [](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.ndim() != 2) shape_fail("gather_rows", table.shape(), "table must be 2-d");
  if (ids.empty()) shape_fail("gather_rows", table.shape(), "no ids");
  const std::size_t n = table.shape()[0];
  const std::size_t cols = table.shape()[1];
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  for (std::size_t id : idx) {
    if (id >= n) {
      throw std::out_of_range("gather_rows: id " + std::to_string(id) + " out of range for table " +
                              shape_str(table.shape()));
    }
  }
  auto tv = table.data();
  std::vector<double> out(idx.size() * cols);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(tv.begin() + idx[i] * cols, cols, out.begin() + i * cols);
  return make_result("gather_rows", {idx.size(), cols}, std::move(out), {table},
                     [idx, cols](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
                       }
                     });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  if (index.size() != rows) shape_fail("pick", a.shape(), "index count " + std::to_string(index.size()));
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) throw std::out_of_range("pick: index " + std::to_string(idx[r]) + " >= " + std::to_string(cols));
    out[r] = a.data()[r * cols + idx[r]];
  }
  return make_result("pick", {rows}, std::move(out), {a},
                     [idx, cols](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + idx[r]] += g[r];
                     });
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  if (times == 0) shape_fail("repeat_rows", a.shape(), "zero repeats");
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  auto av = a.data();
  std::vector<double> out(rows * times * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < times; ++t) std::copy_n(av.begin() + r * cols, cols, out.begin() + (r * times + t) * cols);
  }
  return make_result("repeat_rows", {rows * times, cols}, std::move(out), {a},
                     [rows, cols, times](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t t = 0; t < times; ++t) {
                           for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[(r * times + t) * cols + c];
                         }
                       }
                     });
}

Tensor mean_row_groups(const Tensor& a, std::size_t group) {
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  if (group == 0 || rows % group != 0) {
    shape_fail("mean_row_groups", a.shape(), "row count not divisible by group " + std::to_string(group));
  }
  const std::size_t n = rows / group;
  auto av = a.data();
  std::vector<double> out(n * cols, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < group; ++i) {
      for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += av[(s * group + i) * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] /= static_cast<double>(group);
  }
  return make_result("mean_row_groups", {n, cols}, std::move(out), {a},
                     [n, group, cols](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       auto& gx = *ig[0];
                       const double inv = 1.0 / static_cast<double>(group);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t i = 0; i < group; ++i) {
                           for (std::size_t c = 0; c < cols; ++c) gx[(s * group + i) * cols + c] += g[s * cols + c] * inv;
                         }
                       }
                     });
}

Tensor weighted_row_sum(const Tensor& weights, const Tensor& rows) {
  const std::size_t n = weights.rows();
  const std::size_t k = weights.cols();
  const std::size_t d = rows.cols();
  if (rows.rows() != n * k) shape_fail("weighted_row_sum", weights.shape(), rows.shape(), "rows must be n*k");
  auto wv = weights.data();
  auto rv = rows.data();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < k; ++i) {
      const double w = wv[s * k + i];
      for (std::size_t c = 0; c < d; ++c) out[s * d + c] += w * rv[(s * k + i) * d + c];
    }
  }
  return make_result("weighted_row_sum", {n, d}, std::move(out), {weights, rows},
                     [n, k, d](const Node& self, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       const auto& w = in_value(self, 0);
                       const auto& v = in_value(self, 1);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t i = 0; i < k; ++i) {
                           const std::size_t row = (s * k + i) * d;
                           if (ig[0]) {
                             double acc = 0.0;
                             for (std::size_t c = 0; c < d; ++c) acc += g[s * d + c] * v[row + c];
                             (*ig[0])[s * k + i] += acc;
                           }
                           if (ig[1]) {
                             for (std::size_t c = 0; c < d; ++c) (*ig[1])[row + c] += w[s * k + i] * g[s * d + c];
                           }
                         }
                       }
                     });
}

Tensor select_rows(const std::vector<bool>& keep, const Tensor& if_true, const Tensor& if_false) {
  if (if_true.shape() != if_false.shape()) shape_fail("select_rows", if_true.shape(), if_false.shape());
  const std::size_t rows = if_true.rows();
  const std::size_t cols = if_true.cols();
  if (keep.size() != rows) shape_fail("select_rows", if_true.shape(), "mask length " + std::to_string(keep.size()));
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto src = (keep[r] ? if_true : if_false).data();
    std::copy_n(src.begin() + r * cols, cols, out.begin() + r * cols);
  }
  return make_result("select_rows", if_true.shape(), std::move(out), {if_true, if_false},
                     [keep, cols](const Node&, std::span<const double> g, std::span<std::vector<double>*> ig) {
                       for (std::size_t r = 0; r < keep.size(); ++r) {
                         auto* target = keep[r] ? ig[0] : ig[1];
                         if (!target) continue;
                         for (std::size_t c = 0; c < cols; ++c) (*target)[r * cols + c] += g[r * cols + c];
                       }
                     });
}

// ---------------------------------------------------------------- grad check

GradCheckResult grad_check_detail(const std::function<Tensor()>& scalar_fn, std::span<const Tensor> params,
                                  double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw std::invalid_argument("grad_check: epsilon must be in (0, 1e-3]");
  auto evaluate = [&]() {
    NoGradGuard no_grad;
    const double v = scalar_fn().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: function value is not finite");
    return v;
  };
  auto ratio = [](double diff, double a, double b) { return diff / std::max({a, b, 1e-8}); };
  const GradientMap grads = backward(scalar_fn());
  GradCheckResult out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    const Tensor analytic = grads[param];
    auto values = param.mutable_data();
    double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate();
      };
      // Five-point central stencil: truncation error O(eps^4).
      const double near = at(epsilon) - at(-epsilon);
      const double far = at(2.0 * epsilon) - at(-2.0 * epsilon);
      values[i] = saved;
      const double numeric = (8.0 * near - far) / (12.0 * epsilon);
      const double ga = analytic.at(i);
      out.max_elementwise_error =
          std::max(out.max_elementwise_error, ratio(std::abs(ga - numeric), std::abs(ga), std::abs(numeric)));
      diff_sq += (ga - numeric) * (ga - numeric);
      analytic_sq += ga * ga;
      numeric_sq += numeric * numeric;
    }
    out.elements += values.size();
    const double err = ratio(std::sqrt(diff_sq), std::sqrt(analytic_sq), std::sqrt(numeric_sq));
    if (err > out.max_relative_error || p == 0) {
      out.max_relative_error = std::max(out.max_relative_error, err);
      out.worst_param = p;
    }
  }
  return out;
}

double grad_check(const std::function<Tensor()>& scalar_fn, std::span<const Tensor> params, double epsilon) {
  return grad_check_detail(scalar_fn, params, epsilon).max_relative_error;
}

}  // namespace genref
