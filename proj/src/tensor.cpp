#include "loopalign/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "loopalign/errors.hpp"

namespace loopalign {

namespace {
thread_local Precision tl_precision = Precision::f64;
thread_local bool tl_grad_enabled = true;
}  // namespace

Precision precision() { return tl_precision; }
void set_precision(Precision p) { tl_precision = p; }

PrecisionGuard::PrecisionGuard(Precision p) : saved_(tl_precision) { tl_precision = p; }
PrecisionGuard::~PrecisionGuard() { tl_precision = saved_; }

bool grad_enabled() { return tl_grad_enabled; }
NoGradGuard::NoGradGuard() : saved_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = saved_; }

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  if (shape.size() == 1) out << ',';
  out << ')';
  return out.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

void round_to_precision(std::vector<double>& v) {
  if (tl_precision == Precision::f32) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

void validate_shape(const Shape& shape, std::size_t n) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != n) {
    throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(n) +
                     " values");
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// Outer/axis/inner factorisation used by reductions, concat and slicing.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

class OpBuilder {
 public:
  static Tensor wrap(NodePtr node) { return Tensor(std::move(node)); }
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw ContractError("operation on an undefined tensor");
    return t.node_;
  }

  // Creates the result node, wiring parents only when a gradient is needed.
  static Tensor make(Shape shape, std::vector<double> value, std::vector<const Tensor*> inputs,
                     std::function<void(Node&)> backward) {
    round_to_precision(value);
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->value = std::move(value);
    out->leaf = false;
    bool needs = false;
    if (tl_grad_enabled) {
      for (const Tensor* in : inputs) needs = needs || node(*in)->requires_grad;
    }
    if (needs) {
      out->requires_grad = true;
      for (const Tensor* in : inputs) out->parents.push_back(node(*in));
      out->backward = std::move(backward);
    }
    return Tensor(std::move(out));
  }
};

namespace {

// Parent gradient buffer, or nullptr when that parent does not need one.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

const NodePtr& N(const Tensor& t) { return OpBuilder::node(t); }

}  // namespace

// ---------------------------------------------------------------------------
// Construction and accessors

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  validate_shape(shape, values.size());
  round_to_precision(values);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = element_count(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = element_count(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return N(*this)->shape; }

std::size_t Tensor::size(int axis) const { return shape()[normalize_axis(axis, dim())]; }

std::size_t Tensor::numel() const { return N(*this)->value.size(); }

std::span<const double> Tensor::values() const { return N(*this)->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires one element, shape is " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return N(*this)->requires_grad; }
bool Tensor::is_leaf() const { return N(*this)->leaf; }

std::span<const double> Tensor::grad() const { return N(*this)->grad; }

void Tensor::zero_grad() const {
  auto& g = N(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

std::span<double> Tensor::mutable_values() const {
  if (!N(*this)->leaf) throw ContractError("only leaf tensors can be modified in place");
  return node_->value;
}

void Tensor::set_requires_grad(bool flag) const {
  if (!N(*this)->leaf) throw ContractError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = N(*this)->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  const auto& root = N(*this);
  if (root->value.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS; graphs from unrolled loops can be deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

struct BroadcastPlan {
  Shape out;
  bool same = false;
  // Collapsed iteration space for the general case: extents and the element
  // strides of each operand (0 on broadcast axes), innermost last.
  std::vector<std::size_t> dims, sa, sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t ra = 1, rb = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : ra;
    sb[i] = pb[i] == 1 ? 0 : rb;
    ra *= pa[i];
    rb *= pb[i];
  }
  // Merge an axis into the next inner one when both operands stay contiguous.
  for (std::size_t i = 0; i < rank; ++i) {
    if (plan.out[i] == 1) continue;
    if (!plan.dims.empty()) {
      const std::size_t d = plan.dims.back();
      if (plan.sa.back() == sa[i] * plan.out[i] && plan.sb.back() == sb[i] * plan.out[i]) {
        plan.dims.back() = d * plan.out[i];
        plan.sa.back() = sa[i];
        plan.sb.back() = sb[i];
        continue;
      }
    }
    plan.dims.push_back(plan.out[i]);
    plan.sa.push_back(sa[i]);
    plan.sb.push_back(sb[i]);
  }
  if (plan.dims.empty()) {
    plan.dims = {1};
    plan.sa = {0};
    plan.sb = {0};
  }
  return plan;
}

// Calls f(k, ia, ib) for every output element k in row-major order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t rank = plan.dims.size();
  const std::size_t inner = plan.dims.back(), ia_step = plan.sa.back(), ib_step = plan.sb.back();
  std::size_t outer = 1;
  for (std::size_t d = 0; d + 1 < rank; ++d) outer *= plan.dims[d];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0, k = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t xa = ia, xb = ib;
    for (std::size_t j = 0; j < inner; ++j, ++k, xa += ia_step, xb += ib_step) f(k, xa, xb);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ia += plan.sa[d];
      ib += plan.sb[d];
      if (counter[d] < plan.dims[d]) break;
      ia -= plan.sa[d] * counter[d];
      ib -= plan.sb[d] * counter[d];
      counter[d] = 0;
    }
  }
}

template <typename F>
Tensor unary(const Tensor& x, F f, std::function<double(double, double)> dfdx) {
  const auto& xv = N(x)->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return OpBuilder::make(x.shape(), std::move(out), {&x}, [dfdx](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (g != 0.0) gx[i] += g * dfdx(xin[i], self.value[i]);
    }
  });
}

[[noreturn]] void domain_failure(const char* op, double x, const char* requirement) {
  std::ostringstream msg;
  msg << op << " domain error: input " << x << " violates " << requirement;
  throw DomainError(msg.str());
}

}  // namespace

Tensor apply(UnaryOp op, const Tensor& x) {
  const auto& xv = N(x)->value;
  switch (op) {
    case UnaryOp::neg:
      return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
    case UnaryOp::tanh:
      return unary(x, [](double v) { return std::tanh(v); },
                   [](double, double y) { return 1.0 - y * y; });
    case UnaryOp::atanh:
      for (double v : xv) {
        if (!(v > -1.0 && v < 1.0)) domain_failure("atanh", v, "|x| < 1");
      }
      return unary(x, [](double v) { return std::atanh(v); },
                   [](double v, double) { return 1.0 / (1.0 - v * v); });
    case UnaryOp::acosh:
      for (double v : xv) {
        if (!(v >= 1.0)) domain_failure("arccosh", v, "x >= 1");
      }
      return unary(x, [](double v) { return std::acosh(v); },
                   [](double v, double) { return 1.0 / std::sqrt(v * v - 1.0); });
    case UnaryOp::exp:
      return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
    case UnaryOp::log:
      for (double v : xv) {
        if (!(v >= 0.0)) domain_failure("log", v, "x >= 0");
      }
      return unary(x, [](double v) { return std::log(v); },
                   [](double v, double) { return 1.0 / v; });
    case UnaryOp::sqrt:
      for (double v : xv) {
        if (!(v >= 0.0)) domain_failure("sqrt", v, "x >= 0");
      }
      return unary(x, [](double v) { return std::sqrt(v); },
                   [](double, double y) { return 0.5 / y; });
    case UnaryOp::square:
      return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
  }
  throw ContractError("unknown unary op");
}

Tensor apply(BinaryOp op, const Tensor& a, const Tensor& b) {
  const auto& av = N(a)->value;
  const auto& bv = N(b)->value;
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = element_count(plan->out);
  std::vector<double> out(n);

  auto run = [&](auto f) {
    if (plan->same) {
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else {
      for_each_broadcast(*plan, [&](std::size_t k, std::size_t ia, std::size_t ib) { out[k] = f(av[ia], bv[ib]); });
    }
  };
  switch (op) {
    case BinaryOp::add: run([](double x, double y) { return x + y; }); break;
    case BinaryOp::sub: run([](double x, double y) { return x - y; }); break;
    case BinaryOp::mul: run([](double x, double y) { return x * y; }); break;
    case BinaryOp::div: run([](double x, double y) { return x / y; }); break;
  }

  return OpBuilder::make(plan->out, std::move(out), {&a, &b}, [op, plan](Node& self) {
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    auto step = [&](std::size_t k, std::size_t ia, std::size_t ib) {
      const double g = self.grad[k];
      if (g == 0.0) return;
      switch (op) {
        case BinaryOp::add:
          if (ga) ga[ia] += g;
          if (gb) gb[ib] += g;
          break;
        case BinaryOp::sub:
          if (ga) ga[ia] += g;
          if (gb) gb[ib] -= g;
          break;
        case BinaryOp::mul:
          if (ga) ga[ia] += g * y[ib];
          if (gb) gb[ib] += g * x[ia];
          break;
        case BinaryOp::div:
          if (ga) ga[ia] += g / y[ib];
          if (gb) gb[ib] -= g * x[ia] / (y[ib] * y[ib]);
          break;
      }
    };
    if (plan->same) {
      for (std::size_t k = 0; k < self.grad.size(); ++k) step(k, k, k);
    } else {
      for_each_broadcast(*plan, step);
    }
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return apply(BinaryOp::add, a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return apply(BinaryOp::sub, a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return apply(BinaryOp::mul, a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return apply(BinaryOp::div, a, b); }
Tensor operator-(const Tensor& x) { return apply(UnaryOp::neg, x); }
Tensor operator+(const Tensor& a, double b) { return a + Tensor::scalar(b); }
Tensor operator-(const Tensor& a, double b) { return a - Tensor::scalar(b); }
Tensor operator*(const Tensor& a, double b) { return a * Tensor::scalar(b); }
Tensor operator/(const Tensor& a, double b) { return a / Tensor::scalar(b); }
Tensor operator+(double a, const Tensor& b) { return Tensor::scalar(a) + b; }
Tensor operator-(double a, const Tensor& b) { return Tensor::scalar(a) - b; }
Tensor operator*(double a, const Tensor& b) { return Tensor::scalar(a) * b; }
Tensor operator/(double a, const Tensor& b) { return Tensor::scalar(a) / b; }

Tensor tanh(const Tensor& x) { return apply(UnaryOp::tanh, x); }
Tensor atanh(const Tensor& x) { return apply(UnaryOp::atanh, x); }
Tensor acosh(const Tensor& x) { return apply(UnaryOp::acosh, x); }
Tensor exp(const Tensor& x) { return apply(UnaryOp::exp, x); }
Tensor log(const Tensor& x) { return apply(UnaryOp::log, x); }
Tensor sqrt(const Tensor& x) { return apply(UnaryOp::sqrt, x); }
Tensor square(const Tensor& x) { return apply(UnaryOp::square, x); }

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp bounds are inverted");
  const auto& xv = N(x)->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  return OpBuilder::make(x.shape(), std::move(out), {&x}, [lo, hi](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xin[i] > lo && xin[i] < hi) gx[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape and reduction ops

Tensor Tensor::reshape(Shape new_shape) const {
  validate_shape(new_shape, numel());
  return OpBuilder::make(std::move(new_shape), N(*this)->value, {this}, [](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor Tensor::transpose(int axis0, int axis1) const {
  const Shape& in = shape();
  const std::size_t a0 = normalize_axis(axis0, in.size());
  const std::size_t a1 = normalize_axis(axis1, in.size());
  Shape out_shape = in;
  std::swap(out_shape[a0], out_shape[a1]);
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_strides(rank);
  std::size_t r = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = r;
    r *= in[i];
  }
  std::vector<std::size_t> perm_strides = in_strides;
  std::swap(perm_strides[a0], perm_strides[a1]);

  // map[k] = input offset of output element k.
  const std::size_t n = numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    (*map)[k] = off;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      off += perm_strides[d];
      if (counter[d] < out_shape[d]) break;
      off -= perm_strides[d] * counter[d];
      counter[d] = 0;
    }
  }
  const auto& xv = node_->value;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = xv[(*map)[k]];
  return OpBuilder::make(std::move(out_shape), std::move(out), {this}, [map](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t k = 0; k < self.grad.size(); ++k) gx[(*map)[k]] += self.grad[k];
  });
}

Tensor Tensor::slice(int axis, std::size_t begin, std::size_t end) const {
  const std::size_t ax = normalize_axis(axis, dim());
  const AxisSplit s = split_at(shape(), ax);
  if (begin >= end || end > s.len) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis of extent " + std::to_string(s.len));
  }
  Shape out_shape = shape();
  out_shape[ax] = end - begin;
  const std::size_t w = end - begin;
  const auto& xv = node_->value;
  std::vector<double> out(s.outer * w * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + static_cast<long>((o * s.len + begin) * s.inner), w * s.inner,
                out.begin() + static_cast<long>(o * w * s.inner));
  }
  return OpBuilder::make(std::move(out_shape), std::move(out), {this},
                         [s, begin, w](Node& self) {
                           double* gx = grad_of(self, 0);
                           if (!gx) return;
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = self.grad.data() + o * w * s.inner;
                             double* dst = gx + (o * s.len + begin) * s.inner;
                             for (std::size_t i = 0; i < w * s.inner; ++i) dst[i] += src[i];
                           }
                         });
}

namespace {

Tensor reduce_sum(const Tensor& x, int axis, bool keepdim, double scale) {
  const std::size_t ax = normalize_axis(axis, x.dim());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<long>(ax));
    if (out_shape.empty()) out_shape.push_back(1);
  }
  const auto& xv = N(x)->value;
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      const double* src = xv.data() + (o * s.len + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  if (scale != 1.0) {
    for (auto& v : out) v *= scale;
  }
  return OpBuilder::make(std::move(out_shape), std::move(out), {&x}, [s, scale](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = self.grad.data() + o * s.inner;
      for (std::size_t l = 0; l < s.len; ++l) {
        double* dst = gx + (o * s.len + l) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i] * scale;
      }
    }
  });
}

}  // namespace

Tensor Tensor::sum(int axis, bool keepdim) const { return reduce_sum(*this, axis, keepdim, 1.0); }

Tensor Tensor::mean(int axis, bool keepdim) const {
  const double len = static_cast<double>(size(axis));
  return reduce_sum(*this, axis, keepdim, 1.0 / len);
}

Tensor Tensor::sum() const { return reshape({numel()}).sum(0); }

Tensor Tensor::mean() const { return reshape({numel()}).mean(0); }

Tensor Tensor::softmax(int axis) const {
  const std::size_t ax = normalize_axis(axis, dim());
  const AxisSplit s = split_at(shape(), ax);
  const auto& xv = node_->value;
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) m = std::max(m, xv[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(xv[base + l * s.inner] - m);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  }
  return OpBuilder::make(shape(), std::move(out), {this}, [s](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t k = base + l * s.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor Tensor::norm(bool keepdim) const {
  const std::size_t d = shape().back();
  const std::size_t rows = numel() / d;
  Shape out_shape = shape();
  if (keepdim) {
    out_shape.back() = 1;
  } else {
    out_shape.pop_back();
    if (out_shape.empty()) out_shape.push_back(1);
  }
  const auto& xv = node_->value;
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += xv[r * d + j] * xv[r * d + j];
    out[r] = std::sqrt(acc);
  }
  return OpBuilder::make(std::move(out_shape), std::move(out), {this}, [d, rows](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = self.value[r];
      if (n == 0.0) continue;
      const double g = self.grad[r] / n;
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g * x[r * d + j];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of an empty list");
  const std::size_t ax = normalize_axis(axis, parts.front().dim());
  Shape out_shape = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    bool ok = ps.size() == out_shape.size();
    for (std::size_t i = 0; ok && i < ps.size(); ++i) ok = i == ax || ps[i] == out_shape[i];
    if (!ok) {
      throw ShapeError("concat shape mismatch: " + to_string(parts.front().shape()) + " vs " +
                       to_string(ps));
    }
    total += ps[ax];
  }
  out_shape[ax] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(element_count(out_shape));
  auto lens = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax];
    lens->push_back(len);
    const auto& pv = N(p)->value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<long>(o * len * s.inner), len * s.inner,
                  out.begin() + static_cast<long>((o * total + offset) * s.inner));
    }
    offset += len;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return OpBuilder::make(std::move(out_shape), std::move(out), inputs,
                         [lens, s, total](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < lens->size(); ++k) {
                             const std::size_t len = (*lens)[k];
                             double* gp = grad_of(self, k);
                             if (gp) {
                               for (std::size_t o = 0; o < s.outer; ++o) {
                                 const double* src =
                                     self.grad.data() + (o * total + offset) * s.inner;
                                 double* dst = gp + o * len * s.inner;
                                 for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                               }
                             }
                             offset += len;
                           }
                         });
}

// ---------------------------------------------------------------------------
// Matrix product

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

// C(n x m) += A(n x k) * B(k x m)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  MutMap(c, N, M).noalias() += ConstMap(a, N, K) * ConstMap(b, K, M);
}

// dA(n x k) += dC(n x m) * B(k x m)^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t n, std::size_t k,
             std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  MutMap(da, N, K).noalias() += ConstMap(dc, N, M) * ConstMap(b, K, M).transpose();
}

// dB(k x m) += A(n x k)^T * dC(n x m)
void gemm_tn(const double* a, const double* dc, double* db, std::size_t n, std::size_t k,
             std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k),
             M = static_cast<Eigen::Index>(m);
  MutMap(db, K, M).noalias() += ConstMap(a, N, K).transpose() * ConstMap(dc, N, M);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(as) + " and " +
                     to_string(bs));
  }
  const std::size_t n = as[as.size() - 2], k = as.back();
  const std::size_t k2 = bs[bs.size() - 2], m = bs.back();
  if (k != k2) {
    throw ShapeError("matmul inner dimensions disagree: " + to_string(as) + " x " + to_string(bs));
  }
  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  // Broadcast the batch axes; a plan over batch shapes gives per-batch offsets.
  Shape batch_a = abatch.empty() ? Shape{1} : abatch;
  Shape batch_b = bbatch.empty() ? Shape{1} : bbatch;
  BroadcastPlan plan;
  try {
    plan = plan_broadcast(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch axes do not broadcast: " + to_string(as) + " x " +
                     to_string(bs));
  }
  const std::size_t batches = element_count(plan.out);
  auto amap = std::make_shared<std::vector<std::size_t>>(batches);
  auto bmap = std::make_shared<std::vector<std::size_t>>(batches);
  if (plan.same) {
    for (std::size_t t = 0; t < batches; ++t) (*amap)[t] = (*bmap)[t] = t;
  } else {
    for_each_broadcast(plan, [&](std::size_t t, std::size_t ia, std::size_t ib) {
      (*amap)[t] = ia;
      (*bmap)[t] = ib;
    });
  }
  Shape out_shape;
  if (!(abatch.empty() && bbatch.empty())) out_shape = plan.out;
  out_shape.push_back(n);
  out_shape.push_back(m);

  const auto& av = N(a)->value;
  const auto& bv = N(b)->value;
  std::vector<double> out(batches * n * m, 0.0);
  for (std::size_t t = 0; t < batches; ++t) {
    gemm_nn(av.data() + (*amap)[t] * n * k, bv.data() + (*bmap)[t] * k * m,
            out.data() + t * n * m, n, k, m);
  }
  return OpBuilder::make(std::move(out_shape), std::move(out), {&a, &b},
                         [amap, bmap, n, k, m](Node& self) {
                           double* ga = grad_of(self, 0);
                           double* gb = grad_of(self, 1);
                           const auto& x = self.parents[0]->value;
                           const auto& y = self.parents[1]->value;
                           for (std::size_t t = 0; t < amap->size(); ++t) {
                             const double* g = self.grad.data() + t * n * m;
                             if (ga) gemm_nt(g, y.data() + (*bmap)[t] * k * m,
                                             ga + (*amap)[t] * n * k, n, k, m);
                             if (gb) gemm_tn(x.data() + (*amap)[t] * n * k, g,
                                             gb + (*bmap)[t] * k * m, n, k, m);
                           }
                         });
}

}  // namespace loopalign
