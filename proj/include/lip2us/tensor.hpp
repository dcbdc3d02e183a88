#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lip2us/error.hpp"

namespace lip2us {

enum class DType { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);
const char* to_string(DType dtype);

namespace detail {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl;

// One recorded operation: the inputs it read and the closure that pushes the
// output gradient back into them.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  Storage data;
  Storage grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  DType dtype() const { return data.index() == 0 ? DType::f32 : DType::f64; }

  template <class T>
  std::vector<T>& values() { return std::get<std::vector<T>>(data); }
  template <class T>
  const std::vector<T>& values() const { return std::get<std::vector<T>>(data); }

  // Gradient buffer, allocated as zeros on first use.
  template <class T>
  std::vector<T>& grad_values() {
    if (!has_grad) {
      grad = std::vector<T>(numel_of(shape), T(0));
      has_grad = true;
    }
    return std::get<std::vector<T>>(grad);
  }
};

}  // namespace detail

// Dense row-major n-dimensional array with optional reverse-mode gradient
// tracking. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f32);

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::vector<float> values);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<const T> data() const {
    check_dtype<T>();
    return impl_->values<T>();
  }
  template <class T>
  std::span<T> mutable_data() {
    check_dtype<T>();
    return impl_->values<T>();
  }

  double item() const;
  double value(std::size_t flat_index) const;
  void set_value(std::size_t flat_index, double v);
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;

  // Accumulated gradient; zeros when backward never reached this tensor.
  Tensor grad() const;
  bool has_grad() const;
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  template <class T>
  void check_dtype() const {
    constexpr DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
    if (dtype() != want) throw UsageError(std::string("tensor dtype is ") + to_string(dtype()));
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Runs reverse-mode differentiation from a scalar loss. Every requires_grad
// leaf reachable from the loss accumulates its gradient; the recorded graph is
// released afterwards.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Forward ops throw NumericError when they produce NaN/Inf from finite inputs.
void set_finite_checks(bool on);
bool finite_checks();

namespace detail {

template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f(float{});
  return f(double{});
}

// Wraps freshly computed output values into a tensor, recording the node when
// any input takes part in differentiation.
Tensor make_result(const char* op, Shape shape, Storage values,
                   std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& out)> backward_fn);

void check_same_dtype(const char* op, const Tensor& a, const Tensor& b);

}  // namespace detail

}  // namespace lip2us
