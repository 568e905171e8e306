#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_parameter = false;
  std::uint64_t id = 0;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional handle into the
/// autodiff graph. Copies share the underlying node; use clone() for a deep
/// copy. Scalars have shape {1}.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients. Its gradient starts at zero.
  static Tensor parameter(Shape shape, std::vector<double> data, std::string name);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access. Only meaningful on leaves; the optimizer and the
  // checkpoint loader are the intended users.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool is_parameter() const;
  std::uint64_t id() const;
  const std::string& name() const;
  /// Gradient accumulator left by the last backward sweep (zeros if the
  /// tensor was not reached).
  std::vector<double> grad() const;

  Tensor detach() const;
  Tensor clone() const;

  // Internal access for the op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
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

/// Gradients of the parameters reached by a backward sweep, keyed by
/// parameter id.
class GradientMap {
 public:
  struct Entry {
    std::string name;
    Tensor grad;
  };

  void insert(const Tensor& param, Tensor grad);
  void insert(std::uint64_t id, std::string name, Tensor grad);
  bool contains(const Tensor& param) const;
  /// Gradient for `param`, or zeros of the parameter's shape if the
  /// parameter is not on any path to the loss.
  Tensor of(const Tensor& param) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::uint64_t, Entry>& entries() const { return entries_; }

 private:
  std::map<std::uint64_t, Entry> entries_;
};

/// Reverse-mode sweep from a scalar loss. Every gradient accumulator in the
/// graph is reset before the sweep, so calling twice yields the same result.
GradientMap backward(const Tensor& loss);

// ---- recorded primitives ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// X [m×n] + b [n], b broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
/// Splits the last axis into equal parts.
std::vector<Tensor> split_cols(const Tensor& a, std::size_t parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows of `table` selected by `indices`; also used to pick hidden states.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
/// Mean over axis 0 (-> [cols]) or axis 1 (-> [rows]) of a 2-D tensor.
Tensor mean(const Tensor& a, std::size_t axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
/// Natural log; requires strictly positive input.
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
/// Mean over rows of -sum_c target[c] * log(max(probs[c], floor)). `target`
/// is treated as a constant.
Tensor soft_cross_entropy(const Tensor& target, const Tensor& probs, double floor = 1e-12);

}  // namespace tkd
