#include "pa3/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pa3 {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Tensor make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

// Builds an op result. History is only kept when some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) {
                       return n->requires_grad;
                     });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Index maps from each output element to the contributing input element.
struct BroadcastPlan {
  Shape out_shape;
  bool same_shape = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out_shape = a;
    plan.same_shape = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  plan.out_shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    }
    plan.out_shape[i] = std::max(pa[i], pb[i]);
  }
  const auto sa = strides_of(pa);
  const auto sb = strides_of(pb);
  const std::size_t total = shape_numel(plan.out_shape);
  plan.a_index.resize(total);
  plan.b_index.resize(total);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      if (pa[d] != 1) ia += idx[d] * sa[d];
      if (pb[d] != 1) ib += idx[d] * sb[d];
    }
    plan.a_index[flat] = ia;
    plan.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape(), op));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  const std::size_t total = shape_numel(plan->out_shape);
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double x = av[plan->same_shape ? i : plan->a_index[i]];
    const double y = bv[plan->same_shape ? i : plan->b_index[i]];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x + y; break;
      case BinaryKind::kSub: out[i] = x - y; break;
      case BinaryKind::kMul: out[i] = x * y; break;
    }
  }
  return make_result(plan->out_shape, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [plan, kind](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       const auto& g = self.grad;
                       const std::size_t total = g.size();
                       if (na.requires_grad) {
                         auto& ga = na.ensure_grad();
                         for (std::size_t i = 0; i < total; ++i) {
                           const std::size_t ia = plan->same_shape ? i : plan->a_index[i];
                           const std::size_t ib = plan->same_shape ? i : plan->b_index[i];
                           ga[ia] += kind == BinaryKind::kMul ? g[i] * nb.value[ib] : g[i];
                         }
                       }
                       if (nb.requires_grad) {
                         auto& gb = nb.ensure_grad();
                         for (std::size_t i = 0; i < total; ++i) {
                           const std::size_t ia = plan->same_shape ? i : plan->a_index[i];
                           const std::size_t ib = plan->same_shape ? i : plan->b_index[i];
                           switch (kind) {
                             case BinaryKind::kAdd: gb[ib] += g[i]; break;
                             case BinaryKind::kSub: gb[ib] -= g[i]; break;
                             case BinaryKind::kMul: gb[ib] += g[i] * na.value[ia]; break;
                           }
                         }
                       }
                     });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, const char* op, Forward forward, Derivative derivative) {
  require_defined(x, op);
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), forward);
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [derivative](Node& self) {
    Node& in = *self.inputs[0];
    auto& gi = in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gi[i] += self.grad[i] * derivative(in.value[i], self.value[i]);
    }
  });
}

std::size_t last_dim(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + pa3::to_string(shape));
  }
  const std::size_t n = shape_numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + pa3::to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + pa3::to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return make_leaf({}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from({m, n}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + pa3::to_string(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (!node_->is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + pa3::to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + pa3::to_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + pa3::to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

ConstMatrixMap Tensor::matrix_view() const {
  const std::size_t cols = last_dim(shape());
  return ConstMatrixMap(node_->value.data(), static_cast<Eigen::Index>(numel() / cols),
                        static_cast<Eigen::Index>(cols));
}

MatrixMap Tensor::mutable_matrix_view() {
  auto span = mutable_data();
  const std::size_t cols = last_dim(shape());
  return MatrixMap(span.data(), static_cast<Eigen::Index>(span.size() / cols),
                   static_cast<Eigen::Index>(cols));
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  if (!node_->is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return defined() && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (defined()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + pa3::to_string(shape()));
  if (!node_->requires_grad) throw ContractError("backward() on a tensor that is not connected to any gradient leaf");
  GradTape::record(*this).replay(*this);
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return make_leaf(node_->shape, node_->value, false);
}

// ---------------------------------------------------------------------------
// GradTape

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS; entries end up in topological order.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.entries_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void GradTape::replay(const Tensor& root) const {
  // Interior gradients are per-pass scratch; only leaves accumulate across passes.
  for (Node* node : entries_) {
    if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
  }
  auto& root_grad = root.node()->ensure_grad();
  for (auto& g : root_grad) g += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool batched = sa.size() == 3 && sb.size() == 3;
  if (!(batched || (sa.size() == 2 && sb.size() == 2)) || sa[sa.size() - 1] != sb[sb.size() - 2] ||
      (batched && sa[0] != sb[0])) {
    throw DimensionError("matmul: shapes " + to_string(sa) + " and " + to_string(sb) + " do not conform");
  }
  const std::size_t batch = batched ? sa[0] : 1;
  const auto m = static_cast<Eigen::Index>(sa[sa.size() - 2]);
  const auto k = static_cast<Eigen::Index>(sa[sa.size() - 1]);
  const auto n = static_cast<Eigen::Index>(sb[sb.size() - 1]);
  Shape out_shape = batched ? Shape{batch, sa[1], sb[2]} : Shape{sa[0], sb[1]};
  std::vector<double> out(batch * static_cast<std::size_t>(m * n));
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap am(a.data().data() + i * m * k, m, k);
    ConstMatrixMap bm(b.data().data() + i * k * n, k, n);
    MatrixMap om(out.data() + i * m * n, m, n);
    om.noalias() = am * bm;
  }
  return make_result(std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [batch, m, k, n](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nb = *self.inputs[1];
                       for (std::size_t i = 0; i < batch; ++i) {
                         ConstMatrixMap g(self.grad.data() + i * m * n, m, n);
                         if (na.requires_grad) {
                           MatrixMap ga(na.ensure_grad().data() + i * m * k, m, k);
                           ConstMatrixMap bm(nb.value.data() + i * k * n, k, n);
                           ga.noalias() += g * bm.transpose();
                         }
                         if (nb.requires_grad) {
                           MatrixMap gb(nb.ensure_grad().data() + i * k * n, k, n);
                           ConstMatrixMap am(na.value.data() + i * m * k, m, k);
                           gb.noalias() += am.transpose() * g;
                         }
                       }
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const auto& s = x.shape();
  if (axes.size() != s.size()) throw DimensionError("permute: axis list does not match " + to_string(s));
  std::vector<bool> used(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size() || used[a]) throw DimensionError("permute: invalid axis order for " + to_string(s));
    used[a] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  const auto in_strides = strides_of(s);
  const std::size_t total = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < s.size(); ++d) src += idx[d] * in_strides[axes[d]];
    (*source)[flat] = src;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(total);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < total; ++i) out[i] = xv[(*source)[i]];
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()}, [source](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gi[(*source)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() == 2) return permute(x, {1, 0});
  if (x.rank() == 3) return permute(x, {0, 2, 1});
  throw DimensionError("transpose: expected rank 2 or 3, got " + to_string(x.shape()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  }
  return make_result(std::move(shape), x.node()->value, {x.node_ptr()}, [](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gi[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape out_shape = first;
  out_shape[axis] = 0;
  auto widths = std::make_shared<std::vector<std::size_t>>();
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: " + to_string(first) + " and " + to_string(s) + " differ off-axis");
    out_shape[axis] += s[axis];
    widths->push_back(s[axis] * inner);
    inputs.push_back(p.node_ptr());
  }
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].node()->value;
    const std::size_t w = (*widths)[p];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += w;
  }
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), [widths, outer, row](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.inputs.size(); ++p) {
      const std::size_t w = (*widths)[p];
      Node& in = *self.inputs[p];
      if (in.requires_grad) {
        auto& gi = in.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < w; ++j) gi[o * w + j] += self.grad[o * row + off + j];
        }
      }
      off += w;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  const Shape& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = length * inner;
  const std::size_t offset = start * inner;
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(outer * out_row);
  const auto& xv = x.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_row + offset), out_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  return make_result(std::move(out_shape), std::move(out), {x.node_ptr()},
                     [outer, in_row, out_row, offset](Node& self) {
                       auto& gi = self.inputs[0]->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < out_row; ++j) gi[o * in_row + offset + j] += self.grad[o * out_row + j];
                       }
                     });
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
  require_defined(row, "repeat_rows");
  if (row.rank() != 2 || row.dim(0) != 1 || n == 0) {
    throw DimensionError("repeat_rows: expected [1xd] and n >= 1, got " + to_string(row.shape()));
  }
  const std::size_t d = row.dim(1);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(row.data().begin(), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  return make_result({n, d}, std::move(out), {row.node_ptr()}, [n, d](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) gi[j] += self.grad[i * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto& v = x.node()->value;
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return make_result({}, {total}, {x.node_ptr()}, [](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (auto& g : gi) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  require_defined(x, "mean_rows");
  if (x.rank() != 2) throw DimensionError("mean_rows: expected rank 2, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(d, 0.0);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  }
  for (auto& v : out) v /= static_cast<double>(n);
  return make_result({1, d}, std::move(out), {x.node_ptr()}, [n, d](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) gi[i * d + j] += self.grad[j] * inv;
    }
  });
}

Tensor sum_cols(const Tensor& x) {
  require_defined(x, "sum_cols");
  if (x.rank() != 2) throw DimensionError("sum_cols: expected rank 2, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(n, 0.0);
  const auto& xv = x.node()->value;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out[i] += xv[i * d + j];
  }
  return make_result({n, 1}, std::move(out), {x.node_ptr()}, [n, d](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) gi[i * d + j] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  const std::size_t cols = last_dim(x.shape());
  const std::size_t rows = x.numel() / cols;
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - peak));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [rows, cols](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_defined(x, "log_softmax_rows");
  const std::size_t cols = last_dim(x.shape());
  const std::size_t rows = x.numel() / cols;
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - peak);
    const double lse = peak + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [rows, cols](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += g[c];
      for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += g[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t cols = last_dim(x.shape());
  if (gain.numel() != cols || bias.numel() != cols) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                         " do not match " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / cols;
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  auto normalized = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (in[c] - mu) * is;
      (*normalized)[r * cols + c] = xh;
      out[r * cols + c] = xh * gv[c] + bv[c];
    }
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
                     [rows, cols, normalized, inv_std](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node& ng = *self.inputs[1];
                       Node& nb = *self.inputs[2];
                       const auto& g = self.grad;
                       if (ng.requires_grad || nb.requires_grad) {
                         auto& gg = ng.ensure_grad();
                         auto& gb = nb.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < cols; ++c) {
                             if (ng.requires_grad) gg[c] += g[r * cols + c] * (*normalized)[r * cols + c];
                             if (nb.requires_grad) gb[c] += g[r * cols + c];
                           }
                         }
                       }
                       if (nx.requires_grad) {
                         auto& gx = nx.ensure_grad();
                         const double inv_n = 1.0 / static_cast<double>(cols);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t c = 0; c < cols; ++c) {
                             const double d = g[r * cols + c] * ng.value[c];
                             mean_d += d;
                             mean_dx += d * (*normalized)[r * cols + c];
                           }
                           mean_d *= inv_n;
                           mean_dx *= inv_n;
                           for (std::size_t c = 0; c < cols; ++c) {
                             const double d = g[r * cols + c] * ng.value[c];
                             gx[r * cols + c] += (*inv_std)[r] * (d - mean_d - (*normalized)[r * cols + c] * mean_dx);
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Lookup and loss

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + to_string(table.shape()));
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto rows = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  std::vector<double> out(rows->size() * d);
  const auto& tv = table.node()->value;
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const std::size_t id = (*rows)[i];
    if (id >= vocab) throw DataError("embedding: id " + std::to_string(id) + " >= vocabulary size " + std::to_string(vocab));
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(id * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return make_result({rows->size(), d}, std::move(out), {table.node_ptr()}, [rows, d](Node& self) {
    auto& gi = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows->size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) gi[(*rows)[i] * d + j] += self.grad[i * d + j];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, std::size_t pad_id) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<double>>(n * vocab, 0.0);
  const auto& lv = logits.node()->value;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t t = (*tgt)[i];
    if (t == pad_id) continue;
    if (t >= vocab) throw DataError("cross_entropy: target id " + std::to_string(t) + " >= " + std::to_string(vocab));
    const double* row = lv.data() + i * vocab;
    const double peak = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - peak);
    const double lse = peak + std::log(z);
    for (std::size_t c = 0; c < vocab; ++c) (*probs)[i * vocab + c] = std::exp(row[c] - lse);
    total += lse - row[t];
    ++count;
  }
  const double loss = count ? total / static_cast<double>(count) : 0.0;
  return make_result({}, {loss}, {logits.node_ptr()}, [tgt, probs, n, vocab, count, pad_id](Node& self) {
    if (count == 0) return;
    auto& gi = self.inputs[0]->ensure_grad();
    const double w = self.grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = (*tgt)[i];
      if (t == pad_id) continue;
      for (std::size_t c = 0; c < vocab; ++c) {
        gi[i * vocab + c] += w * ((*probs)[i * vocab + c] - (c == t ? 1.0 : 0.0));
      }
    }
  });
}

}  // namespace pa3
