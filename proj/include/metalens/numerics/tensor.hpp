#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metalens::numerics {

enum class DType : std::uint8_t {
  F32 = 0,
  F64 = 1,
  C128 = 2,
};

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// Complex tensors keep interleaved (re, im) pairs in `values`.
struct TensorNode {
  Shape shape;
  DType dtype = DType::F64;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations
/// never mutate their inputs; they return new tensors. The only mutation
/// paths are `mutable_values()` (for parameter updates outside of a
/// recording tape) and the gradient buffer written by `GradTape::backward`.
///
/// Arithmetic is carried out in double precision. An F32 tensor stores
/// values rounded to single precision, and operations whose inputs are all
/// F32 round their results the same way.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::F64);

  static Tensor zeros(Shape shape, DType dtype = DType::F64);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64);
  static Tensor scalar(double value);
  static Tensor from_complex(Shape shape, std::span<const std::complex<double>> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;
  bool is_complex() const { return dtype() == DType::C128; }

  std::span<const double> values() const;
  std::span<double> mutable_values();
  std::span<const std::complex<double>> complex_values() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Fresh storage with the same values and no gradient history.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

/// Bitwise equality of shape, dtype and values.
bool bit_equal(const Tensor& a, const Tensor& b);

/// Largest absolute elementwise difference (real tensors of equal shape).
double max_abs_diff(const Tensor& a, const Tensor& b);

std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index);

}  // namespace metalens::numerics
