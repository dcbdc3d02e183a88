#include "lip2us/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace lip2us {

namespace {

thread_local bool g_grad_enabled = true;
bool g_finite_checks = true;

detail::Storage make_storage(DType dtype, std::size_t n, double fill) {
  if (dtype == DType::f32) return std::vector<float>(n, static_cast<float>(fill));
  return std::vector<double>(n, fill);
}

bool all_finite(const detail::Storage& s) {
  return std::visit(
      [](const auto& v) {
        for (auto x : v)
          if (!std::isfinite(x)) return false;
        return true;
      },
      s);
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

Tensor::Tensor(Shape shape, DType dtype) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor shape " + to_string(shape) + " has a zero extent");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data = make_storage(dtype, numel_of(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  t.impl_->data = make_storage(dtype, t.numel(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
  if (numel_of(shape) != values.size())
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  Tensor t(std::move(shape), DType::f32);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != values.size())
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  Tensor t(std::move(shape), DType::f64);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return numel_of(shape()); }

DType Tensor::dtype() const {
  if (!impl_) throw UsageError("use of undefined tensor");
  return impl_->dtype();
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return value(0);
}

double Tensor::value(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, impl()->data);
}

void Tensor::set_value(std::size_t i, double x) {
  std::visit([i, x](auto& v) { v.at(i) = static_cast<typename std::decay_t<decltype(v)>::value_type>(x); },
             impl_->data);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, impl()->data);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw UsageError("use of undefined tensor");
  if (impl_->grad_fn) throw UsageError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

Tensor Tensor::grad() const {
  Tensor g(shape(), dtype());
  if (impl_->has_grad) g.impl_->data = impl_->grad;
  return g;
}

bool Tensor::has_grad() const { return impl_ && impl_->has_grad; }

void Tensor::zero_grad() {
  if (!impl_) return;
  impl_->has_grad = false;
  impl_->grad = std::vector<float>{};
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->data = std::visit(
      [target](const auto& v) -> detail::Storage {
        if (target == DType::f32) return std::vector<float>(v.begin(), v.end());
        return std::vector<double>(v.begin(), v.end());
      },
      impl_->data);
  impl->requires_grad = impl_->requires_grad && !impl_->grad_fn;
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  if (loss.numel() != 1)
    throw UsageError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Post-order DFS yields a topological order with inputs before consumers.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* inputs = node->grad_fn ? &node->grad_fn->inputs : nullptr;
    if (inputs && next < inputs->size()) {
      auto* child = (*inputs)[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  auto* root = loss.impl().get();
  detail::dispatch(root->dtype(), [&]<class T>(T) { root->grad_values<T>()[0] += T(1); });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->grad_fn && node->has_grad) node->grad_fn->backward(*node);
  }
  for (auto* node : order) {
    if (node->grad_fn) {
      node->grad_fn.reset();
      node->has_grad = false;
      node->grad = std::vector<float>{};
    }
  }
}

namespace detail {

Tensor make_result(const char* op, Shape shape, Storage values, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& out)> backward_fn) {
  if (g_finite_checks && !all_finite(values))
    throw NumericError(std::string("non-finite value produced by ") + op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool track = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = op;
    for (auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward_fn);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw UsageError(std::string(op) + ": mixed dtypes " + to_string(a.dtype()) + " and " +
                     to_string(b.dtype()));
}

}  // namespace detail

}  // namespace lip2us
