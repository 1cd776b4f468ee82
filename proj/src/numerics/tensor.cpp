#include "metalens/numerics/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "metalens/errors.hpp"

namespace metalens::numerics {

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::F32:
      return "f32";
    case DType::F64:
      return "f64";
    case DType::C128:
      return "c128";
  }
  return "?";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void round_to_f32(std::vector<double>& v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::size_t storage_count(const Shape& shape, DType dtype) {
  return shape_numel(shape) * (dtype == DType::C128 ? 2 : 1);
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype) {
  if (values.size() != storage_count(shape, dtype)) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(storage_count(shape, dtype)) + " stored values, got " +
                     std::to_string(values.size()));
  }
  if (dtype == DType::F32) round_to_f32(values);
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->dtype = dtype;
  node_->values = std::move(values);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> v(storage_count(shape, dtype), dtype == DType::C128 ? 0.0 : value);
  if (dtype == DType::C128) {
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = value;
  }
  return Tensor(std::move(shape), std::move(v), dtype);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::from_complex(Shape shape, std::span<const std::complex<double>> values) {
  if (values.size() != shape_numel(shape)) throw ShapeError("complex tensor size mismatch");
  std::vector<double> v(values.size() * 2);
  std::memcpy(v.data(), values.data(), v.size() * sizeof(double));
  return Tensor(std::move(shape), std::move(v), DType::C128);
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

namespace {
const detail::TensorNode& checked(const std::shared_ptr<detail::TensorNode>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const { return checked(node_).dtype; }

std::span<const double> Tensor::values() const {
  const auto& n = checked(node_);
  if (n.dtype == DType::C128) throw ContractError("real view requested on a complex tensor");
  return n.values;
}

std::span<double> Tensor::mutable_values() {
  checked(node_);
  if (node_->dtype == DType::C128) throw ContractError("real view requested on a complex tensor");
  return node_->values;
}

std::span<const std::complex<double>> Tensor::complex_values() const {
  const auto& n = checked(node_);
  if (n.dtype != DType::C128) throw ContractError("complex view requested on a real tensor");
  return {reinterpret_cast<const std::complex<double>*>(n.values.data()), n.values.size() / 2};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return values()[0];
}

std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) throw ShapeError("index rank mismatch for " + shape_str(shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) throw ShapeError("index out of range for " + shape_str(shape));
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return values()[flat_index(shape(), index)]; }

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(node_);
  if (flag && node_->dtype == DType::C128) throw ContractError("complex tensors do not carry gradients");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.values, n.dtype);
}

Tensor Tensor::to(DType dtype) const {
  const auto& n = checked(node_);
  if (dtype == n.dtype) return detach();
  if ((dtype == DType::C128) != (n.dtype == DType::C128)) {
    throw ContractError("real/complex conversion is only available through the FFT");
  }
  return Tensor(n.shape, n.values, dtype);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  const auto& va = a.node()->values;
  const auto& vb = b.node()->values;
  return std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto va = a.values();
  auto vb = b.values();
  double m = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m;
}

}  // namespace metalens::numerics
