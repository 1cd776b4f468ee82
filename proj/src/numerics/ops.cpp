#include "metalens/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "gemm.hpp"
#include "metalens/errors.hpp"
#include "metalens/numerics/autograd.hpp"

namespace metalens::numerics {

namespace {

using detail::grad_buffer;
using detail::TensorNode;
using Nodes = std::span<TensorNode* const>;

void require_real(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.is_complex()) throw ContractError(std::string(op) + ": complex tensors are only valid in FFT-domain code");
}

DType promote(const Tensor& a) { return a.dtype() == DType::F32 ? DType::F32 : DType::F64; }
DType promote(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::F32 && b.dtype() == DType::F32) ? DType::F32 : DType::F64;
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Calls f(linear_index, offset) for every element of `shape` in row-major
// order, where offset = sum(index[i] * strides[i]).
template <class F>
void for_each_offset(const Shape& shape, const std::vector<std::size_t>& strides, F&& f) {
  const std::size_t n = shape_numel(shape);
  if (n == 0) return;
  const std::size_t r = shape.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t offset = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    f(lin, offset);
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < shape[ax]) {
        offset += strides[ax];
        break;
      }
      offset -= strides[ax] * (shape[ax] - 1);
      idx[ax] = 0;
    }
  }
}

struct BroadcastIndex {
  Shape out;
  bool same = false;
  std::vector<std::uint32_t> ia, ib;
};

// Strides of `shape` right-aligned against `out`, zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto own = strides_of(shape);
  const std::size_t lead = out.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) s[lead + i] = shape[i] == 1 ? 0 : own[i];
  return s;
}

BroadcastIndex make_broadcast(const Shape& a, const Shape& b) {
  BroadcastIndex bi;
  bi.out = broadcast_shape(a, b);
  if (a == b) {
    bi.same = true;
    return bi;
  }
  const auto sa = aligned_strides(a, bi.out);
  const auto sb = aligned_strides(b, bi.out);
  const std::size_t n = shape_numel(bi.out);
  bi.ia.resize(n);
  bi.ib.resize(n);
  for_each_offset(bi.out, sa, [&](std::size_t lin, std::size_t off) { bi.ia[lin] = static_cast<std::uint32_t>(off); });
  for_each_offset(bi.out, sb, [&](std::size_t lin, std::size_t off) { bi.ib[lin] = static_cast<std::uint32_t>(off); });
  return bi;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu_value(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor binary(Elementwise op, const Tensor& a, const Tensor& b) {
  require_real(a, "elementwise");
  require_real(b, "elementwise");
  auto bi = std::make_shared<BroadcastIndex>(make_broadcast(a.shape(), b.shape()));
  const auto va = a.values();
  const auto vb = b.values();
  const std::size_t n = shape_numel(bi->out);
  std::vector<double> out(n);
  auto ia = [&](std::size_t i) { return bi->same ? i : bi->ia[i]; };
  auto ib = [&](std::size_t i) { return bi->same ? i : bi->ib[i]; };
  switch (op) {
    case Elementwise::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] + vb[ib(i)];
      break;
    case Elementwise::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] - vb[ib(i)];
      break;
    case Elementwise::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] * vb[ib(i)];
      break;
    case Elementwise::Div:
      for (std::size_t i = 0; i < n; ++i) out[i] = va[ia(i)] / vb[ib(i)];
      break;
    default:
      throw ContractError("elementwise: op is not binary");
  }
  Tensor result(bi->out, std::move(out), promote(a, b));
  if (detail::recording({&a, &b})) {
    detail::record("elementwise", {&a, &b}, result, [op, bi](const TensorNode& o, Nodes in) {
      const auto& g = o.grad;
      auto* ga = grad_buffer(in[0]);
      auto* gb = grad_buffer(in[1]);
      const auto& xa = in[0]->values;
      const auto& xb = in[1]->values;
      auto ia = [&](std::size_t i) { return bi->same ? i : bi->ia[i]; };
      auto ib = [&](std::size_t i) { return bi->same ? i : bi->ib[i]; };
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t p = ia(i), q = ib(i);
        switch (op) {
          case Elementwise::Add:
            if (ga) (*ga)[p] += g[i];
            if (gb) (*gb)[q] += g[i];
            break;
          case Elementwise::Sub:
            if (ga) (*ga)[p] += g[i];
            if (gb) (*gb)[q] -= g[i];
            break;
          case Elementwise::Mul:
            if (ga) (*ga)[p] += g[i] * xb[q];
            if (gb) (*gb)[q] += g[i] * xa[p];
            break;
          case Elementwise::Div:
            if (ga) (*ga)[p] += g[i] / xb[q];
            if (gb) (*gb)[q] -= g[i] * xa[p] / (xb[q] * xb[q]);
            break;
          default:
            break;
        }
      }
    });
  }
  return result;
}

// Unary map with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  require_real(x, name);
  const auto v = x.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  Tensor result(x.shape(), std::move(out), promote(x));
  if (detail::recording({&x})) {
    detail::record(name, {&x}, result, [deriv](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      const auto& xv = in[0]->values;
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * deriv(xv[i], o.values[i]);
    });
  }
  return result;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case Elementwise::Sigmoid:
      return sigmoid(a);
    case Elementwise::Gelu:
      return gelu(a);
    case Elementwise::Scale:
      if (b.numel() != 1) throw ShapeError("scale expects a scalar factor");
      return scale(a, b.item());
    default:
      return binary(op, a, b);
  }
}

Tensor elementwise(Elementwise op, const Tensor& a, double b) {
  switch (op) {
    case Elementwise::Add:
      return add(a, b);
    case Elementwise::Sub:
      return add(a, -b);
    case Elementwise::Mul:
    case Elementwise::Scale:
      return scale(a, b);
    case Elementwise::Div:
      return scale(a, 1.0 / b);
    case Elementwise::Sigmoid:
      return sigmoid(a);
    case Elementwise::Gelu:
      return gelu(a);
  }
  throw ContractError("elementwise: unknown op");
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Elementwise::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Elementwise::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Elementwise::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(Elementwise::Div, a, b); }

Tensor add(const Tensor& a, double b) {
  return unary("add_scalar", a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor one_minus(const Tensor& a) {
  return unary("one_minus", a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return unary("gelu", x, gelu_value, [](double v, double) { return gelu_derivative(v); });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  require_real(x, "sum");
  const auto v = x.values();
  double s = 0.0;
  for (double e : v) s += e;
  Tensor result({}, {s}, promote(x));
  if (detail::recording({&x})) {
    detail::record("sum", {&x}, result, [](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      for (auto& e : *gx) e += o.grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_over(const Tensor& x, std::vector<std::size_t> axes) {
  require_real(x, "mean_over");
  const Shape& in = x.shape();
  Shape out = in;
  std::size_t count = 1;
  for (auto ax : axes) {
    if (ax >= in.size()) throw ShapeError("mean_over: axis out of range for " + shape_str(in));
    if (out[ax] == 1 && in[ax] != 1) throw ShapeError("mean_over: repeated axis");
    count *= in[ax];
    out[ax] = 1;
  }
  if (count == 0) throw ContractError("mean_over: empty reduction");
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  for_each_offset(in, aligned_strides(out, in), [&](std::size_t lin, std::size_t off) {
    (*map)[lin] = static_cast<std::uint32_t>(off);
  });
  const auto v = x.values();
  std::vector<double> acc(shape_numel(out), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) acc[(*map)[i]] += v[i];
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& e : acc) e *= inv;
  Tensor result(out, std::move(acc), promote(x));
  if (detail::recording({&x})) {
    detail::record("mean_over", {&x}, result, [map, inv](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += o.grad[(*map)[i]] * inv;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  require_real(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), promote(x));
  if (detail::recording({&x})) {
    detail::record("reshape", {&x}, result, [](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += o.grad[i];
    });
  }
  return result;
}

Tensor gather(const Tensor& x, IndexMap index, Shape out_shape) {
  require_real(x, "gather");
  if (!index || index->size() != shape_numel(out_shape)) throw ShapeError("gather: index size does not match output");
  const auto v = x.values();
  const auto& idx = *index;
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v.size()) throw ShapeError("gather: index out of range");
    out[i] = v[idx[i]];
  }
  Tensor result(std::move(out_shape), std::move(out), promote(x));
  if (detail::recording({&x})) {
    detail::record("gather", {&x}, result, [index](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      const auto& id = *index;
      for (std::size_t i = 0; i < id.size(); ++i) (*gx)[id[i]] += o.grad[i];
    });
  }
  return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> seen(in.size(), false);
  Shape out(in.size());
  std::vector<std::size_t> st(in.size());
  const auto own = strides_of(in);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.size() || seen[order[i]]) throw ShapeError("permute: invalid axis order");
    seen[order[i]] = true;
    out[i] = in[order[i]];
    st[i] = own[order[i]];
  }
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  for_each_offset(out, st, [&](std::size_t lin, std::size_t off) { (*map)[lin] = static_cast<std::uint32_t>(off); });
  return gather(x, map, out);
}

Tensor transpose_last2(const Tensor& x) {
  const std::size_t r = x.rank();
  if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[r - 1], order[r - 2]);
  return permute(x, order);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in = x.shape();
  if (axis >= in.size() || start + length > in[axis]) throw ShapeError("slice out of range for " + shape_str(in));
  Shape out = in;
  out[axis] = length;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  auto map = std::make_shared<std::vector<std::uint32_t>>();
  map->reserve(shape_numel(out));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < length; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        map->push_back(static_cast<std::uint32_t>((o * in[axis] + start + a) * inner + i));
  return gather(x, map, out);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out = first;
  out[axis] = 0;
  DType dt = DType::F32;
  for (const auto& p : parts) {
    require_real(p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(first));
    }
    out[axis] += s[axis];
    if (p.dtype() != DType::F32) dt = DType::F64;
  }
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::vector<double> v(shape_numel(out));
  auto extents = std::make_shared<std::vector<std::size_t>>();
  for (const auto& p : parts) extents->push_back(p.shape()[axis] * inner);
  const std::size_t row = out[axis] * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    const std::size_t w = (*extents)[k];
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data() + o * w, w, v.data() + o * row + col);
    col += w;
  }
  Tensor result(out, std::move(v), dt);
  if (detail::recording(parts)) {
    detail::record("concat", parts, result, [extents, outer, row](const TensorNode& o, Nodes in) {
      std::size_t c = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t w = (*extents)[k];
        if (auto* g = grad_buffer(in[k])) {
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < w; ++j) (*g)[r * w + j] += o.grad[r * row + c + j];
        }
        c += w;
      }
    });
  }
  return result;
}

namespace {

std::size_t pad_source(std::ptrdiff_t i, std::size_t n, PadMode mode) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (mode == PadMode::Replicate) return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, sn - 1));
  if (i < 0) i = -i;
  if (i >= sn) i = 2 * (sn - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

Tensor pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right,
             PadMode mode) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw ShapeError("pad2d needs rank >= 2");
  const std::size_t H = in[in.size() - 2], W = in[in.size() - 1];
  if (mode == PadMode::Reflect && (top >= H || bottom >= H || left >= W || right >= W)) {
    throw ShapeError("reflect padding must be smaller than the padded extent");
  }
  Shape out = in;
  const std::size_t Ho = H + top + bottom, Wo = W + left + right;
  out[in.size() - 2] = Ho;
  out[in.size() - 1] = Wo;
  const std::size_t planes = x.numel() / (H * W);
  auto map = std::make_shared<std::vector<std::uint32_t>>(planes * Ho * Wo);
  std::vector<std::size_t> xs(Wo);
  for (std::size_t c = 0; c < Wo; ++c) xs[c] = pad_source(static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(left), W, mode);
  std::size_t k = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < Ho; ++r) {
      const std::size_t sy = pad_source(static_cast<std::ptrdiff_t>(r) - static_cast<std::ptrdiff_t>(top), H, mode);
      for (std::size_t c = 0; c < Wo; ++c) (*map)[k++] = static_cast<std::uint32_t>((p * H + sy) * W + xs[c]);
    }
  return gather(x, map, out);
}

Tensor crop2d(const Tensor& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw ShapeError("crop2d needs rank >= 2");
  const std::size_t H = in[in.size() - 2], W = in[in.size() - 1];
  if (top + height > H || left + width > W) throw ShapeError("crop2d window exceeds " + shape_str(in));
  Shape out = in;
  out[in.size() - 2] = height;
  out[in.size() - 1] = width;
  const std::size_t planes = x.numel() / (H * W);
  auto map = std::make_shared<std::vector<std::uint32_t>>();
  map->reserve(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c)
        map->push_back(static_cast<std::uint32_t>((p * H + top + r) * W + left + c));
  return gather(x, map, out);
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % r || s[3] % r) throw ShapeError("pixel_unshuffle: bad shape " + shape_str(s));
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], h = H / r, w = W / r;
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  std::size_t k = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
              (*map)[k++] = static_cast<std::uint32_t>(((b * C + c) * H + y * r + i) * W + xx * r + j);
  return gather(x, map, {B, C * r * r, h, w});
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] % (r * r)) throw ShapeError("pixel_shuffle: bad shape " + shape_str(s));
  const std::size_t B = s[0], C = s[1] / (r * r), h = s[2], w = s[3];
  auto map = std::make_shared<std::vector<std::uint32_t>>(x.numel());
  std::size_t k = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t Y = 0; Y < h * r; ++Y)
        for (std::size_t X = 0; X < w * r; ++X) {
          const std::size_t src_c = c * r * r + (Y % r) * r + (X % r);
          (*map)[k++] = static_cast<std::uint32_t>(((b * s[1] + src_c) * h + Y / r) * w + X / r);
        }
  return gather(x, map, {B, C, h * r, w * r});
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_real(a, "matmul");
  require_real(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  const std::size_t M = sa[sa.size() - 2], K = sa.back(), K2 = sb[sb.size() - 2], N = sb.back();
  if (K != K2) throw ShapeError("matmul inner dimensions differ: " + shape_str(sa) + " x " + shape_str(sb));
  const Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
  auto bi = std::make_shared<BroadcastIndex>(make_broadcast(ba, bb));
  Shape out = bi->out;
  out.push_back(M);
  out.push_back(N);
  const std::size_t batches = shape_numel(bi->out);
  std::vector<double> v(batches * M * N, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t t = 0; t < batches; ++t) {
    const std::size_t ia = bi->same ? t : bi->ia[t], ib = bi->same ? t : bi->ib[t];
    detail::gemm_nn(M, N, K, pa + ia * M * K, pb + ib * K * N, v.data() + t * M * N);
  }
  Tensor result(out, std::move(v), promote(a, b));
  if (detail::recording({&a, &b})) {
    detail::record("matmul", {&a, &b}, result, [bi, M, N, K, batches](const TensorNode& o, Nodes in) {
      auto* ga = grad_buffer(in[0]);
      auto* gb = grad_buffer(in[1]);
      const double* xa = in[0]->values.data();
      const double* xb = in[1]->values.data();
      for (std::size_t t = 0; t < batches; ++t) {
        const std::size_t ia = bi->same ? t : bi->ia[t], ib = bi->same ? t : bi->ib[t];
        const double* g = o.grad.data() + t * M * N;
        if (ga) detail::gemm_nt(M, K, N, g, xb + ib * K * N, ga->data() + ia * M * K);
        if (gb) detail::gemm_tn(K, N, M, xa + ia * M * K, g, gb->data() + ib * K * N);
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_real(x, "softmax");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const auto v = x.values();
  std::vector<double> y(v.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double m = -INFINITY;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = v[base + k * inner];
        if (std::isnan(e)) throw NumericError("softmax: NaN input");
        m = std::max(m, e);
      }
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(v[base + k * inner] - m);
        y[base + k * inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] *= inv;
    }
  Tensor result(s, std::move(y), promote(x));
  if (detail::recording({&x})) {
    detail::record("softmax", {&x}, result, [outer, inner, n](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      const auto& yv = o.values;
      const auto& g = o.grad;
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = a * n * inner + i;
          double d = 0.0;
          for (std::size_t k = 0; k < n; ++k) d += g[base + k * inner] * yv[base + k * inner];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t p = base + k * inner;
            (*gx)[p] += yv[p] * (g[p] - d);
          }
        }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

Tensor conv_pointwise(const Tensor& x, const Tensor& w) {
  const Shape& s = x.shape();
  const std::size_t B = s[0], Cin = s[1], HW = s[2] * s[3];
  const Shape& ws = w.shape();
  if (!(ws.size() == 2 || (ws.size() == 4 && ws[2] == 1 && ws[3] == 1)) || ws[1] != Cin) {
    throw ShapeError("pointwise conv: weight " + shape_str(ws) + " does not match input " + shape_str(s));
  }
  const std::size_t Cout = ws[0];
  std::vector<double> v(B * Cout * HW, 0.0);
  const double* px = x.values().data();
  const double* pw = w.values().data();
  for (std::size_t b = 0; b < B; ++b) detail::gemm_nn(Cout, HW, Cin, pw, px + b * Cin * HW, v.data() + b * Cout * HW);
  Tensor result({B, Cout, s[2], s[3]}, std::move(v), promote(x, w));
  if (detail::recording({&x, &w})) {
    detail::record("conv1x1", {&x, &w}, result, [B, Cin, Cout, HW](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      auto* gw = grad_buffer(in[1]);
      const double* xv = in[0]->values.data();
      const double* wv = in[1]->values.data();
      for (std::size_t b = 0; b < B; ++b) {
        const double* g = o.grad.data() + b * Cout * HW;
        if (gx) detail::gemm_tn(Cin, HW, Cout, wv, g, gx->data() + b * Cin * HW);
        if (gw) detail::gemm_nt(Cout, Cin, HW, g, xv + b * Cin * HW, gw->data());
      }
    });
  }
  return result;
}

Tensor conv_depthwise(const Tensor& x, const Tensor& w) {
  const Shape& s = x.shape();
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (w.numel() != C * 9 || w.shape()[0] != C) {
    throw ShapeError("depthwise conv: weight " + shape_str(w.shape()) + " does not match input " + shape_str(s));
  }
  // Replicate padding: clamped source coordinates for the three taps.
  auto rows = std::make_shared<std::vector<std::size_t>>(H * 3);
  auto cols = std::make_shared<std::vector<std::size_t>>(W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t i = 0; i < 3; ++i) (*rows)[y * 3 + i] = pad_source(static_cast<std::ptrdiff_t>(y + i) - 1, H, PadMode::Replicate);
  for (std::size_t c = 0; c < W; ++c)
    for (std::size_t j = 0; j < 3; ++j) (*cols)[c * 3 + j] = pad_source(static_cast<std::ptrdiff_t>(c + j) - 1, W, PadMode::Replicate);
  const double* px = x.values().data();
  const double* pw = w.values().data();
  std::vector<double> v(x.numel(), 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* plane = px + (b * C + c) * H * W;
      const double* k = pw + c * 9;
      double* out = v.data() + (b * C + c) * H * W;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double acc = 0.0;
          for (std::size_t i = 0; i < 3; ++i) {
            const double* row = plane + (*rows)[y * 3 + i] * W;
            for (std::size_t j = 0; j < 3; ++j) acc += k[i * 3 + j] * row[(*cols)[xx * 3 + j]];
          }
          out[y * W + xx] = acc;
        }
    }
  Tensor result(s, std::move(v), promote(x, w));
  if (detail::recording({&x, &w})) {
    detail::record("conv_dw3x3", {&x, &w}, result, [B, C, H, W, rows, cols](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      auto* gw = grad_buffer(in[1]);
      const double* xv = in[0]->values.data();
      const double* wv = in[1]->values.data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t off = (b * C + c) * H * W;
          const double* g = o.grad.data() + off;
          const double* k = wv + c * 9;
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
              const double gv = g[y * W + xx];
              for (std::size_t i = 0; i < 3; ++i) {
                const std::size_t ry = (*rows)[y * 3 + i] * W;
                for (std::size_t j = 0; j < 3; ++j) {
                  const std::size_t src = off + ry + (*cols)[xx * 3 + j];
                  if (gx) (*gx)[src] += gv * k[i * 3 + j];
                  if (gw) (*gw)[c * 9 + i * 3 + j] += gv * xv[src];
                }
              }
            }
        }
    });
  }
  return result;
}

Tensor box_filter(const Tensor& x, std::size_t k) {
  const Shape& s = x.shape();
  const std::size_t H = s[2], W = s[3], planes = s[0] * s[1];
  if (k == 0) throw ContractError("box filter window must be >= 1");
  const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>((k - 1) / 2);
  auto rows = std::make_shared<std::vector<std::size_t>>(H * k);
  auto cols = std::make_shared<std::vector<std::size_t>>(W * k);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t i = 0; i < k; ++i)
      (*rows)[y * k + i] = pad_source(static_cast<std::ptrdiff_t>(y + i) - lo, H, PadMode::Replicate);
  for (std::size_t c = 0; c < W; ++c)
    for (std::size_t j = 0; j < k; ++j)
      (*cols)[c * k + j] = pad_source(static_cast<std::ptrdiff_t>(c + j) - lo, W, PadMode::Replicate);
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto xv = x.values();
  std::vector<double> v(x.numel());
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = xv.data() + p * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t c = 0; c < W; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          const double* row = plane + (*rows)[y * k + i] * W;
          for (std::size_t j = 0; j < k; ++j) acc += row[(*cols)[c * k + j]];
        }
        v[p * H * W + y * W + c] = acc * inv;
      }
  }
  Tensor result(s, std::move(v), promote(x));
  if (detail::recording({&x})) {
    detail::record("box_filter", {&x}, result, [planes, H, W, k, inv, rows, cols](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t c = 0; c < W; ++c) {
            const double g = o.grad[p * H * W + y * W + c] * inv;
            for (std::size_t i = 0; i < k; ++i) {
              double* row = gx->data() + p * H * W + (*rows)[y * k + i] * W;
              for (std::size_t j = 0; j < k; ++j) row[(*cols)[c * k + j]] += g;
            }
          }
    });
  }
  return result;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, ConvMode mode) {
  require_real(x, "conv2d");
  require_real(weight, "conv2d");
  if (x.rank() != 4) throw ShapeError("conv2d expects [B,C,H,W], got " + shape_str(x.shape()));
  return mode == ConvMode::Pointwise1x1 ? conv_pointwise(x, weight) : conv_depthwise(x, weight);
}

Tensor avg_pool(const Tensor& x, PoolSpec spec) {
  if (x.rank() != 4) throw ShapeError("avg_pool expects [B,C,H,W], got " + shape_str(x.shape()));
  switch (spec.kind) {
    case PoolSpec::Kind::Spatial:
      return mean_over(x, {2, 3});
    case PoolSpec::Kind::Channel:
      return mean_over(x, {1});
    case PoolSpec::Kind::Window:
      require_real(x, "avg_pool");
      return box_filter(x, spec.window);
  }
  throw ContractError("avg_pool: unknown pooling kind");
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, double eps) {
  require_real(x, "layer_norm");
  require_real(weight, "layer_norm");
  const Shape& s = x.shape();
  if (s.size() != 4 || weight.numel() != s[1]) throw ShapeError("layer_norm: weight does not match channels");
  const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
  const auto xv = x.values();
  const auto wv = weight.values();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(B * HW);
  std::vector<double> out(x.numel());
  const double invC = 1.0 / static_cast<double>(C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t base = b * C * HW + p;
      double mu = 0.0;
      for (std::size_t c = 0; c < C; ++c) mu += xv[base + c * HW];
      mu *= invC;
      double var = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[base + c * HW] - mu;
        var += d * d;
      }
      var *= invC;
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * HW + p] = is;
      for (std::size_t c = 0; c < C; ++c) {
        const double h = (xv[base + c * HW] - mu) * is;
        (*xhat)[base + c * HW] = h;
        out[base + c * HW] = h * wv[c];
      }
    }
  Tensor result(s, std::move(out), promote(x, weight));
  if (detail::recording({&x, &weight})) {
    detail::record("layer_norm", {&x, &weight}, result, [B, C, HW, xhat, inv_std, invC](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      auto* gw = grad_buffer(in[1]);
      const auto& w = in[1]->values;
      const auto& g = o.grad;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < HW; ++p) {
          const std::size_t base = b * C * HW + p;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t q = base + c * HW;
            const double dh = g[q] * w[c];
            m1 += dh;
            m2 += dh * (*xhat)[q];
            if (gw) (*gw)[c] += g[q] * (*xhat)[q];
          }
          if (!gx) continue;
          m1 *= invC;
          m2 *= invC;
          const double is = (*inv_std)[b * HW + p];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t q = base + c * HW;
            (*gx)[q] += is * (g[q] * w[c] - m1 - (*xhat)[q] * m2);
          }
        }
    });
  }
  return result;
}

Tensor l2_normalize_last(const Tensor& x, double eps) {
  require_real(x, "l2_normalize");
  if (x.rank() < 1) throw ShapeError("l2_normalize needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.numel() / n : 0;
  const auto xv = x.values();
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double nr = std::sqrt(detail::dot(xv.data() + r * n, xv.data() + r * n, n));
    const double d = std::max(nr, eps);
    (*norms)[r] = nr;
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = xv[r * n + i] / d;
  }
  Tensor result(x.shape(), std::move(y), promote(x));
  if (detail::recording({&x})) {
    detail::record("l2_normalize", {&x}, result, [rows, n, norms, eps](const TensorNode& o, Nodes in) {
      auto* gx = grad_buffer(in[0]);
      if (!gx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double nr = (*norms)[r];
        const double* g = o.grad.data() + r * n;
        const double* yv = o.values.data() + r * n;
        if (nr > eps) {
          const double d = detail::dot(yv, g, n);
          for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += (g[i] - yv[i] * d) / nr;
        } else {
          for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += g[i] / eps;
        }
      }
    });
  }
  return result;
}

}  // namespace metalens::numerics
