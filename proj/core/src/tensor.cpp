#include "tkd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tkd/error.hpp"

namespace tkd {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
}

// Result node for an op. Recording happens only if grad mode is on and at
// least one input carries a gradient.
NodePtr make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs) {
  auto node = make_node(std::move(shape), std::move(value));
  if (!g_grad_enabled) return node;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
  }
  return node;
}

NodePtr make_result(Shape shape, std::vector<double> value, std::span<const Tensor> inputs) {
  auto node = make_node(std::move(shape), std::move(value));
  if (!g_grad_enabled) return node;
  for (const auto& t : inputs) {
    if (t.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    for (const auto& t : inputs) node->parents.push_back(t.node());
  }
  return node;
}

bool wants_grad(const NodePtr& n) { return n->requires_grad; }

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  check_shape(shape);
  const auto n = shape_size(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  }
  return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data, std::string name) {
  Tensor t = from(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  t.node_->is_parameter = true;
  t.node_->name = std::move(name);
  t.node_->grad.assign(t.node_->value.size(), 0.0);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  return node_->shape.size() == 1 ? 1 : node_->shape[0];
}

std::size_t Tensor::cols() const { return node_->shape.back(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() called on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_parameter() const { return node_ && node_->is_parameter; }
std::uint64_t Tensor::id() const { return node_->id; }
const std::string& Tensor::name() const { return node_->name; }

std::vector<double> Tensor::grad() const {
  if (node_->grad.size() != node_->value.size()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return Tensor(make_node(node_->shape, node_->value)); }

Tensor Tensor::clone() const {
  if (node_->is_parameter) return parameter(node_->shape, node_->value, node_->name);
  return detach();
}

// ---- grad mode -------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- GradientMap -----------------------------------------------------------

void GradientMap::insert(const Tensor& param, Tensor grad) {
  entries_[param.id()] = Entry{param.name(), std::move(grad)};
}

void GradientMap::insert(std::uint64_t id, std::string name, Tensor grad) {
  entries_[id] = Entry{std::move(name), std::move(grad)};
}

bool GradientMap::contains(const Tensor& param) const { return entries_.count(param.id()) != 0; }

Tensor GradientMap::of(const Tensor& param) const {
  auto it = entries_.find(param.id());
  if (it == entries_.end()) return Tensor::zeros(param.shape());
  return it->second.grad;
}

GradientMap backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }

  for (Node* n : order) {
    if (n->is_parameter) result.insert(n->id, n->name, Tensor::from(n->shape, n->grad));
  }
  return result;
}

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto node = make_result({m, n}, std::move(out), {&a, &b});
  if (wants_grad(node)) {
    node->backward = [m, k, n](Node& self) {
      Node& na = *self.parents[0];
      Node& nb = *self.parents[1];
      const double* g = self.grad.data();
      if (na.requires_grad) {
        // dA = dC * B^T
        std::vector<double> bt(n * k);
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = nb.value[p * n + j];
        }
        for (std::size_t i = 0; i < m; ++i) {
          double* dst = na.grad.data() + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            const double* btrow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) dst[p] += gv * btrow[p];
          }
        }
      }
      if (nb.requires_grad) {
        // dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = na.value[i * k + p];
            double* dst = nb.grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) dst[j] += av * grow[j];
          }
        }
      }
    };
  }
  return Tensor(node);
}

namespace {

// Elementwise binary op on equal shapes with local derivatives da, db.
template <typename F, typename DA, typename DB>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  require_defined(a, op);
  require_defined(b, op);
  require_same(a, b, op);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a.data()[i], b.data()[i]);
  auto node = make_result(a.shape(), std::move(out), {&a, &b});
  if (wants_grad(node)) {
    node->backward = [n, da, db](Node& self) {
      Node& na = *self.parents[0];
      Node& nb = *self.parents[1];
      for (std::size_t i = 0; i < n; ++i) {
        const double g = self.grad[i];
        if (na.requires_grad) na.grad[i] += g * da(na.value[i], nb.value[i]);
        if (nb.requires_grad) nb.grad[i] += g * db(na.value[i], nb.value[i]);
      }
    };
  }
  return Tensor(node);
}

// Elementwise unary op where the derivative is a function of input and output.
template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D d) {
  require_defined(a, op);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a.data()[i]);
  auto node = make_result(a.shape(), std::move(out), {&a});
  if (wants_grad(node)) {
    node->backward = [n, d](Node& self) {
      Node& na = *self.parents[0];
      for (std::size_t i = 0; i < n; ++i) na.grad[i] += self.grad[i] * d(na.value[i], self.value[i]);
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw ContractError("log: input must be strictly positive");
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  require_defined(x, "add_row_vector");
  require_defined(b, "add_row_vector");
  require_2d(x, "add_row_vector");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (b.size() != n || b.shape().size() != 1) {
    throw ShapeError("add_row_vector: bias " + shape_string(b.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.data()[j];
  auto node = make_result(x.shape(), std::move(out), {&x, &b});
  if (wants_grad(node)) {
    node->backward = [m, n](Node& self) {
      Node& nx = *self.parents[0];
      Node& nb = *self.parents[1];
      if (nx.requires_grad)
        for (std::size_t i = 0; i < m * n; ++i) nx.grad[i] += self.grad[i];
      if (nb.requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) nb.grad[j] += self.grad[i * n + j];
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  require_2d(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto node = make_result({n, m}, std::move(out), {&a});
  if (wants_grad(node)) {
    node->backward = [m, n](Node& self) {
      Node& na = *self.parents[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(node);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row count mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(src.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  auto node = make_result({m, total}, std::move(out), parts);
  if (wants_grad(node)) {
    node->backward = [m, total, widths](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        Node& np = *self.parents[k];
        if (np.requires_grad) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
              np.grad[i * widths[k] + j] += self.grad[i * total + off + j];
        }
        off += widths[k];
      }
    };
  }
  return Tensor(node);
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    require_2d(p, "concat_rows");
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column count mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    sizes.push_back(p.size());
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto node = make_result({rows, n}, std::move(out), parts);
  if (wants_grad(node)) {
    node->backward = [sizes](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < sizes.size(); ++k) {
        Node& np = *self.parents[k];
        if (np.requires_grad)
          for (std::size_t i = 0; i < sizes[k]; ++i) np.grad[i] += self.grad[off + i];
        off += sizes[k];
      }
    };
  }
  return Tensor(node);
}

std::vector<Tensor> split_cols(const Tensor& a, std::size_t parts) {
  require_defined(a, "split_cols");
  require_2d(a, "split_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (parts == 0 || n % parts != 0) {
    throw ShapeError("split_cols: cannot split " + shape_string(a.shape()) + " into " + std::to_string(parts) +
                     " equal parts");
  }
  const std::size_t w = n / parts;
  std::vector<Tensor> out;
  out.reserve(parts);
  for (std::size_t k = 0; k < parts; ++k) {
    std::vector<double> v(m * w);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(a.data().data() + i * n + k * w, w, v.data() + i * w);
    auto node = make_result({m, w}, std::move(v), {&a});
    if (wants_grad(node)) {
      node->backward = [m, n, w, k](Node& self) {
        Node& na = *self.parents[0];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) na.grad[i * n + k * w + j] += self.grad[i * w + j];
      };
    }
    out.emplace_back(node);
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_rows");
  require_2d(a, "slice_rows");
  const std::size_t n = a.shape()[1];
  if (begin >= end || end > a.shape()[0]) {
    throw ShapeError("slice_rows: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") for " + shape_string(a.shape()));
  }
  std::vector<double> v(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  auto node = make_result({end - begin, n}, std::move(v), {&a});
  if (wants_grad(node)) {
    node->backward = [offset = begin * n](Node& self) {
      Node& na = *self.parents[0];
      for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[offset + i] += self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_defined(table, "gather_rows");
  require_2d(table, "gather_rows");
  const std::size_t rows = table.shape()[0], n = table.shape()[1];
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<double> out(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       shape_string(table.shape()));
    }
    std::copy_n(table.data().data() + indices[r] * n, n, out.data() + r * n);
  }
  auto node = make_result({indices.size(), n}, std::move(out), {&table});
  if (wants_grad(node)) {
    node->backward = [idx = std::vector<std::size_t>(indices.begin(), indices.end()), n](Node& self) {
      Node& nt = *self.parents[0];
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) nt.grad[idx[r] * n + j] += self.grad[r * n + j];
    };
  }
  return Tensor(node);
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_defined(a, "mean");
  require_2d(a, "mean");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (axis > 1) throw ShapeError("mean: axis must be 0 or 1");
  const std::size_t len = axis == 0 ? n : m;
  const double inv = 1.0 / static_cast<double>(axis == 0 ? m : n);
  std::vector<double> out(len, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += a.data()[i * n + j];
  for (auto& v : out) v *= inv;
  auto node = make_result({len}, std::move(out), {&a});
  if (wants_grad(node)) {
    node->backward = [m, n, axis, inv](Node& self) {
      Node& na = *self.parents[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) na.grad[i * n + j] += self.grad[axis == 0 ? j : i] * inv;
    };
  }
  return Tensor(node);
}

Tensor sum_all(const Tensor& a) {
  require_defined(a, "sum_all");
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto node = make_result({1}, {s}, {&a});
  if (wants_grad(node)) {
    node->backward = [](Node& self) {
      Node& na = *self.parents[0];
      for (auto& g : na.grad) g += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  require_2d(x, "softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto node = make_result({m, n}, std::move(out), {&x});
  if (wants_grad(node)) {
    node->backward = [m, n](Node& self) {
      Node& nx = *self.parents[0];
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.value.data() + i * n;
        const double* g = self.grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) nx.grad[i * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return Tensor(node);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  require_2d(x, "layer_norm");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma " + shape_string(gamma.shape()) + " / beta " +
                     shape_string(beta.shape()) + " do not match width " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  std::vector<double> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  auto node = make_result({m, d}, std::move(out), {&x, &gamma, &beta});
  if (wants_grad(node)) {
    node->backward = [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
      Node& nx = *self.parents[0];
      Node& ng = *self.parents[1];
      Node& nb = *self.parents[2];
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = self.grad.data() + i * d;
        const double* xh = xhat.data() + i * d;
        if (ng.requires_grad)
          for (std::size_t j = 0; j < d; ++j) ng.grad[j] += g[j] * xh[j];
        if (nb.requires_grad)
          for (std::size_t j = 0; j < d; ++j) nb.grad[j] += g[j];
        if (nx.requires_grad) {
          // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
          double sum_dxh = 0.0, sum_dxh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[j] * ng.value[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[j] * ng.value[j];
            nx.grad[i * d + j] += inv_std[i] * (dxh - sum_dxh * inv_d - xh[j] * sum_dxh_xh * inv_d);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor soft_cross_entropy(const Tensor& target, const Tensor& probs, double floor) {
  require_defined(target, "soft_cross_entropy");
  require_defined(probs, "soft_cross_entropy");
  require_2d(probs, "soft_cross_entropy");
  if (target.shape() != probs.shape()) {
    throw ContractError("soft_cross_entropy: shape mismatch " + shape_string(target.shape()) + " vs " +
                        shape_string(probs.shape()));
  }
  const std::size_t m = probs.shape()[0], n = probs.shape()[1];
  const double inv_m = 1.0 / static_cast<double>(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double t = target.data()[i * n + j];
      if (t != 0.0) row -= t * std::log(std::max(probs.data()[i * n + j], floor));
    }
    total += row;
  }
  const Tensor constant_target = target.detach();
  auto node = make_result({1}, {total * inv_m}, {&probs});
  if (wants_grad(node)) {
    node->backward = [constant_target, inv_m, floor](Node& self) {
      Node& np = *self.parents[0];
      const auto t = constant_target.data();
      const double g = self.grad[0];
      for (std::size_t i = 0; i < np.value.size(); ++i) {
        if (t[i] != 0.0 && np.value[i] > floor) np.grad[i] -= g * inv_m * t[i] / np.value[i];
      }
    };
  }
  return Tensor(node);
}

}  // namespace tkd
