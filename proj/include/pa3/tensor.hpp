#pragma once

#include <Eigen/Dense>

#include "pa3/errors.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pa3 {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major f64 tensor participating in reverse-mode autodiff.
///
/// A Tensor is a cheap handle; copies share storage. Operations producing a
/// Tensor record their inputs and a local gradient rule when any input
/// requires a gradient and gradient recording is enabled.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major 2-D literal: Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only valid on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// 2-D views over the storage. Tensors of rank > 2 are viewed as
  /// (product of leading dims) x last dim.
  ConstMatrixMap matrix_view() const;
  MatrixMap mutable_matrix_view();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every requires_grad leaf reachable from
  /// this scalar. Repeated calls accumulate.
  void backward() const;

  /// A leaf copy sharing no history with this tensor.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the operations reachable from a loss, in forward
/// (topological) order. Backward replays it in reverse.
class GradTape {
 public:
  static GradTape record(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  const std::vector<detail::Node*>& entries() const { return entries_; }
  void replay(const Tensor& root) const;

 private:
  std::vector<detail::Node*> entries_;
};

/// Gradient recording is on by default; this guard disables it in scope.
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

// Elementwise arithmetic with numpy-style broadcasting (shapes aligned from the
// trailing axis; each pair of dims must be equal or one of them 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, double s) { return add_scalar(x, s); }
inline Tensor operator-(double s, const Tensor& x) { return add_scalar(neg(x), s); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

/// 2-D: [m,k]x[k,n]. 3-D batched: [b,m,k]x[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Repeats a [1, d] row n times.
Tensor repeat_rows(const Tensor& row, std::size_t n);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the first axis of a 2-D tensor, keeping it: [n,d] -> [1,d].
Tensor mean_rows(const Tensor& x);
/// Sum of the last axis of a 2-D tensor: [n,d] -> [n,1].
Tensor sum_cols(const Tensor& x);

/// Softmax over the last axis with row-max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

/// Rows of `table` selected by `ids`; gradient scatter-adds back.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
/// Normalizes the last axis, then applies gain and bias of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Mean negative log-likelihood over positions whose target is not pad_id.
/// Returns 0 when every position is padding.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets,
                     std::size_t pad_id);

}  // namespace pa3
