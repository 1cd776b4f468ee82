#include "metalens/attention/attention.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "metalens/errors.hpp"
#include "metalens/numerics/autograd.hpp"
#include "../numerics/gemm.hpp"
#include "metalens/wiener/wiener.hpp"

namespace metalens::attention {

using numerics::ConvMode;
using numerics::Shape;

void WindowSpec::validate() const {
  if (window == 0) throw ContractError("attention window must be >= 1");
  if (!(overlap_ratio >= 0.0) || !std::isfinite(overlap_ratio)) throw ContractError("overlap ratio must be >= 0");
}

std::size_t WindowSpec::kv_window() const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(window) * (1.0 + overlap_ratio)));
}

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, std::uint64_t seed) {
  if (heads == 0 || dim % heads != 0) throw ContractError("attention dim must be divisible by heads");
  AttentionParams p;
  p.dim = dim;
  p.heads = heads;
  p.wq = numerics::uniform_init({dim, dim}, dim, numerics::seed_for(seed, "wq"));
  p.wk = numerics::uniform_init({dim, dim}, dim, numerics::seed_for(seed, "wk"));
  p.wv = numerics::uniform_init({dim, dim}, dim, numerics::seed_for(seed, "wv"));
  p.wo = numerics::uniform_init({dim, dim}, dim, numerics::seed_for(seed, "wo"));
  p.temperature = numerics::constant_param({heads}, 1.0);
  return p;
}

namespace {

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.values())
    if (!std::isfinite(v)) throw ContractError(std::string(what) + " is not finite");
}

void check_square(const Tensor& t, std::size_t dim, const char* what) {
  if (!t.defined() || t.shape() != Shape{dim, dim}) throw ShapeError(std::string(what) + " must be [dim, dim]");
  check_finite(t, what);
}

}  // namespace

void AttentionParams::validate() const {
  if (heads == 0 || dim % heads != 0) throw ContractError("attention dim must be divisible by heads");
  check_square(wq, dim, "wq");
  check_square(wk, dim, "wk");
  check_square(wv, dim, "wv");
  check_square(wo, dim, "wo");
  if (!temperature.defined() || temperature.shape() != Shape{heads}) throw ShapeError("temperature must be [heads]");
  check_finite(temperature, "temperature");
}

void AttentionParams::collect(const std::string& prefix, numerics::ParamList& out, bool with_temperature) {
  out.push_back({prefix + ".wq", &wq});
  out.push_back({prefix + ".wk", &wk});
  out.push_back({prefix + ".wv", &wv});
  out.push_back({prefix + ".wo", &wo});
  if (with_temperature) out.push_back({prefix + ".temperature", &temperature});
}

CrossAttentionParams CrossAttentionParams::init(std::size_t in_channels, std::size_t feature_dim, std::size_t heads,
                                                std::uint64_t seed) {
  CrossAttentionParams p;
  p.embed = numerics::uniform_init({feature_dim, in_channels}, in_channels, numerics::seed_for(seed, "embed"));
  p.attn = AttentionParams::init(feature_dim, heads, numerics::seed_for(seed, "attn"));
  return p;
}

void CrossAttentionParams::validate() const {
  attn.validate();
  if (!embed.defined() || embed.rank() != 2 || embed.dim(0) != attn.dim) {
    throw ShapeError("embedding must be [feature_dim, in_channels]");
  }
  check_finite(embed, "embed");
}

void CrossAttentionParams::collect(const std::string& prefix, numerics::ParamList& out) {
  out.push_back({prefix + ".embed", &embed});
  attn.collect(prefix + ".attn", out, false);
}

namespace {

std::size_t clamp_coord(std::ptrdiff_t v, std::size_t extent) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(extent) - 1));
}

// Token layout of one query window: its valid query pixels and the clamped
// key/value rows (image * HW + pixel) of its key window.
struct WindowTokens {
  std::vector<std::size_t> query;
  std::vector<std::size_t> key;
};

std::vector<WindowTokens> window_tokens(std::size_t H, std::size_t W, std::size_t M, const WindowSpec& spec) {
  const std::size_t w = spec.window, kv = spec.kv_window();
  const std::size_t nwy = (H + w - 1) / w, nwx = (W + w - 1) / w;
  const auto pad = static_cast<std::ptrdiff_t>((kv - w) / 2);
  std::vector<WindowTokens> out(nwy * nwx);
  for (std::size_t n = 0; n < out.size(); ++n) {
    const std::size_t wy = (n / nwx) * w, wx = (n % nwx) * w;
    for (std::size_t y = wy; y < std::min(wy + w, H); ++y)
      for (std::size_t x = wx; x < std::min(wx + w, W); ++x) out[n].query.push_back(y * W + x);
    const auto y0 = static_cast<std::ptrdiff_t>(wy) - pad, x0 = static_cast<std::ptrdiff_t>(wx) - pad;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t s = 0; s < kv * kv; ++s) {
        const std::size_t y = clamp_coord(y0 + static_cast<std::ptrdiff_t>(s / kv), H);
        const std::size_t x = clamp_coord(x0 + static_cast<std::ptrdiff_t>(s % kv), W);
        out[n].key.push_back(m * H * W + y * W + x);
      }
  }
  return out;
}

// [planes, C, HW] <-> [planes, HW, C]
std::vector<double> to_pixel_major(std::span<const double> x, std::size_t planes, std::size_t C, std::size_t HW) {
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < planes; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = x.data() + (b * C + c) * HW;
      double* dst = out.data() + b * HW * C + c;
      for (std::size_t p = 0; p < HW; ++p) dst[p * C] = src[p];
    }
  return out;
}

void add_channel_major(const std::vector<double>& x, std::size_t planes, std::size_t C, std::size_t HW,
                       std::vector<double>& out) {
  for (std::size_t b = 0; b < planes; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = x.data() + b * HW * C + c;
      double* dst = out.data() + (b * C + c) * HW;
      for (std::size_t p = 0; p < HW; ++p) dst[p] += src[p * C];
    }
}

void gather_rows(const double* src, const std::vector<std::size_t>& rows, std::size_t C, std::vector<double>& dst) {
  dst.resize(rows.size() * C);
  for (std::size_t t = 0; t < rows.size(); ++t) std::copy_n(src + rows[t] * C, C, dst.data() + t * C);
}

void scatter_add_rows(const std::vector<double>& src, const std::vector<std::size_t>& rows, std::size_t C, double* dst) {
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const double* s = src.data() + t * C;
    double* d = dst + rows[t] * C;
    for (std::size_t c = 0; c < C; ++c) d[c] += s[c];
  }
}

// Head slice [Tk, d] of a [Tk, C] tile, transposed to [d, Tk].
void transpose_head(const std::vector<double>& tile, std::size_t Tk, std::size_t C, std::size_t offset, std::size_t d,
                    std::vector<double>& out) {
  out.resize(d * Tk);
  for (std::size_t t = 0; t < Tk; ++t)
    for (std::size_t c = 0; c < d; ++c) out[c * Tk + t] = tile[t * C + offset + c];
}

// In-place softmax of scale * row. A NaN or infinite logit poisons the
// normaliser, so one check covers the row.
void softmax_row(double* row, std::size_t n, double scale) {
  double mx = -INFINITY;
  for (std::size_t t = 0; t < n; ++t) {
    row[t] *= scale;
    mx = row[t] > mx ? row[t] : mx;
  }
  double z = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    row[t] = std::exp(row[t] - mx);
    z += row[t];
  }
  if (!std::isfinite(z) || !std::isfinite(mx)) throw NumericError("attention: non-finite logits");
  const double inv = 1.0 / z;
  for (std::size_t t = 0; t < n; ++t) row[t] *= inv;
}

// q: [B,C,H,W] projected queries; k, v: [B*M,C,H,W] projected keys/values of
// M images per batch entry. Returns the per-pixel attention result [B,C,H,W]
// before the output projection. Works window by window on pixel-major tiles;
// the softmax probabilities are kept for the backward pass.
Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t M, std::size_t heads,
                          const WindowSpec& spec) {
  using numerics::detail::gemm_general;
  spec.validate();
  const std::size_t B = q.dim(0), C = q.dim(1), H = q.dim(2), W = q.dim(3), HW = H * W;
  if (k.shape() != Shape{B * M, C, H, W} || v.shape() != k.shape()) throw ShapeError("key/value extents differ");
  const std::size_t d = C / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto tokens = std::make_shared<const std::vector<WindowTokens>>(window_tokens(H, W, M, spec));
  const std::size_t T = spec.window * spec.window, Tk = M * spec.kv_window() * spec.kv_window();
  const std::size_t nw = tokens->size();

  const std::vector<double> qp = to_pixel_major(q.values(), B, C, HW);
  const std::vector<double> kp = to_pixel_major(k.values(), B * M, C, HW);
  const std::vector<double> vp = to_pixel_major(v.values(), B * M, C, HW);
  // probs[((b * nw + n) * heads + h) * T * Tk + i * Tk + t]
  auto probs = std::make_shared<std::vector<double>>(B * nw * heads * T * Tk);
  std::vector<double> op(B * HW * C, 0.0);
  std::vector<double> qt, kt, vt, ktr, ot;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < nw; ++n) {
      const WindowTokens& tok = (*tokens)[n];
      const std::size_t Tq = tok.query.size();
      gather_rows(qp.data() + b * HW * C, tok.query, C, qt);
      gather_rows(kp.data() + b * M * HW * C, tok.key, C, kt);
      gather_rows(vp.data() + b * M * HW * C, tok.key, C, vt);
      ot.assign(Tq * C, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        double* P = probs->data() + ((b * nw + n) * heads + h) * T * Tk;
        transpose_head(kt, Tk, C, h * d, d, ktr);
        gemm_general(Tq, Tk, d, qt.data() + h * d, C, 1, ktr.data(), Tk, P, Tk);
        for (std::size_t i = 0; i < Tq; ++i) softmax_row(P + i * Tk, Tk, scale);
        gemm_general(Tq, d, Tk, P, Tk, 1, vt.data() + h * d, C, ot.data() + h * d, C);
      }
      scatter_add_rows(ot, tok.query, C, op.data() + b * HW * C);
    }
  std::vector<double> out(B * C * HW, 0.0);
  add_channel_major(op, B, C, HW, out);

  const bool f32 = q.dtype() == numerics::DType::F32 && k.dtype() == numerics::DType::F32 &&
                   v.dtype() == numerics::DType::F32;
  Tensor result(q.shape(), std::move(out), f32 ? numerics::DType::F32 : numerics::DType::F64);
  if (!numerics::detail::recording({&q, &k, &v})) return result;
  numerics::detail::record(
      "window_attention", {&q, &k, &v}, result,
      [tokens, probs, B, C, HW, M, heads, d, T, Tk, nw, scale](
          const numerics::detail::TensorNode& o, std::span<numerics::detail::TensorNode* const> in) {
        auto* gq = numerics::detail::grad_buffer(in[0]);
        auto* gk = numerics::detail::grad_buffer(in[1]);
        auto* gv = numerics::detail::grad_buffer(in[2]);
        const std::vector<double> qp = to_pixel_major(in[0]->values, B, C, HW);
        const std::vector<double> kp = to_pixel_major(in[1]->values, B * M, C, HW);
        const std::vector<double> vp = to_pixel_major(in[2]->values, B * M, C, HW);
        const std::vector<double> gp = to_pixel_major(o.grad, B, C, HW);
        std::vector<double> gqp(gq ? qp.size() : 0, 0.0), gkp(gk ? kp.size() : 0, 0.0), gvp(gv ? vp.size() : 0, 0.0);
        std::vector<double> qt, kt, vt, got, vtr, ds, dqt, dkt, dvt;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t n = 0; n < nw; ++n) {
            const WindowTokens& tok = (*tokens)[n];
            const std::size_t Tq = tok.query.size();
            gather_rows(gp.data() + b * HW * C, tok.query, C, got);
            gather_rows(qp.data() + b * HW * C, tok.query, C, qt);
            gather_rows(kp.data() + b * M * HW * C, tok.key, C, kt);
            gather_rows(vp.data() + b * M * HW * C, tok.key, C, vt);
            dqt.assign(Tq * C, 0.0);
            dkt.assign(Tk * C, 0.0);
            dvt.assign(Tk * C, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
              const double* P = probs->data() + ((b * nw + n) * heads + h) * T * Tk;
              const std::size_t off = h * d;
              // dV = P^T dO
              gemm_general(Tk, d, Tq, P, 1, Tk, got.data() + off, C, dvt.data() + off, C);
              // dS = P * (dO V^T - rowsum), with the logit scale folded in.
              transpose_head(vt, Tk, C, off, d, vtr);
              ds.assign(Tq * Tk, 0.0);
              gemm_general(Tq, Tk, d, got.data() + off, C, 1, vtr.data(), Tk, ds.data(), Tk);
              for (std::size_t i = 0; i < Tq; ++i) {
                const double* pr = P + i * Tk;
                double* dr = ds.data() + i * Tk;
                double r = 0.0;
                for (std::size_t t = 0; t < Tk; ++t) r += pr[t] * dr[t];
                for (std::size_t t = 0; t < Tk; ++t) dr[t] = pr[t] * (dr[t] - r) * scale;
              }
              gemm_general(Tq, d, Tk, ds.data(), Tk, 1, kt.data() + off, C, dqt.data() + off, C);
              gemm_general(Tk, d, Tq, ds.data(), 1, Tk, qt.data() + off, C, dkt.data() + off, C);
            }
            if (gq) scatter_add_rows(dqt, tok.query, C, gqp.data() + b * HW * C);
            if (gk) scatter_add_rows(dkt, tok.key, C, gkp.data() + b * M * HW * C);
            if (gv) scatter_add_rows(dvt, tok.key, C, gvp.data() + b * M * HW * C);
          }
        if (gq) add_channel_major(gqp, B, C, HW, *gq);
        if (gk) add_channel_major(gkp, B * M, C, HW, *gk);
        if (gv) add_channel_major(gvp, B * M, C, HW, *gv);
      });
  return result;
}

void check_input(const Tensor& x, const AttentionParams& p, const std::optional<Tensor>& q_override) {
  if (x.rank() != 4) throw ShapeError("attention expects [B,C,H,W], got " + numerics::shape_str(x.shape()));
  if (x.dim(1) != p.dim) throw ShapeError("attention dim does not match input channels");
  if (q_override && q_override->shape() != x.shape()) throw ShapeError("query override must match the input shape");
  if (p.heads == 0 || p.dim % p.heads != 0) throw ContractError("attention dim must be divisible by heads");
}

}  // namespace

Tensor spatial_attention(const Tensor& x, const AttentionParams& p, const WindowSpec& w,
                         const std::optional<Tensor>& q_override) {
  check_input(x, p, q_override);
  const Tensor q = numerics::conv2d(q_override ? *q_override : x, p.wq, ConvMode::Pointwise1x1);
  const Tensor k = numerics::conv2d(x, p.wk, ConvMode::Pointwise1x1);
  const Tensor v = numerics::conv2d(x, p.wv, ConvMode::Pointwise1x1);
  return numerics::conv2d(windowed_attention(q, k, v, 1, p.heads, w), p.wo, ConvMode::Pointwise1x1);
}

Tensor transposed_attention(const Tensor& x, const AttentionParams& p, const std::optional<Tensor>& q_override) {
  check_input(x, p, q_override);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), d = p.head_dim();
  const Shape heads_shape{B, p.heads, d, H * W};
  auto project = [&](const Tensor& src, const Tensor& weight) {
    return numerics::reshape(numerics::conv2d(src, weight, ConvMode::Pointwise1x1), heads_shape);
  };
  const Tensor q = numerics::l2_normalize_last(project(q_override ? *q_override : x, p.wq));
  const Tensor k = numerics::l2_normalize_last(project(x, p.wk));
  const Tensor v = project(x, p.wv);
  const Tensor temp = numerics::reshape(p.temperature, {1, p.heads, 1, 1});
  const Tensor attn = numerics::softmax(numerics::mul(numerics::matmul(q, numerics::transpose_last2(k)), temp), 3);
  const Tensor out = numerics::reshape(numerics::matmul(attn, v), {B, C, H, W});
  return numerics::conv2d(out, p.wo, ConvMode::Pointwise1x1);
}

Tensor cross_attention_mafg(const Tensor& stack, std::size_t median_index, const CrossAttentionParams& p,
                            const WindowSpec& w) {
  if (stack.rank() != 5) throw ShapeError("cross-attention expects a [B,M,C,H,W] stack");
  const std::size_t B = stack.dim(0), M = stack.dim(1), C = stack.dim(2), H = stack.dim(3), W = stack.dim(4);
  if (M == 0 || B == 0) throw ContractError("cross-attention over an empty stack");
  if (median_index >= M) throw ContractError("median index outside the stack");
  if (p.embed.rank() != 2 || p.embed.dim(1) != C) throw ShapeError("embedding does not match stack channels");
  const std::size_t F = p.attn.dim;
  const Tensor e = numerics::conv2d(numerics::reshape(stack, {B * M, C, H, W}), p.embed, ConvMode::Pointwise1x1);
  const Tensor med =
      numerics::reshape(numerics::slice(numerics::reshape(e, {B, M, F, H, W}), 1, median_index, 1), {B, F, H, W});
  const Tensor q = numerics::conv2d(med, p.attn.wq, ConvMode::Pointwise1x1);
  const Tensor k = numerics::conv2d(e, p.attn.wk, ConvMode::Pointwise1x1);
  const Tensor v = numerics::conv2d(e, p.attn.wv, ConvMode::Pointwise1x1);
  return numerics::conv2d(windowed_attention(q, k, v, M, p.attn.heads, w), p.attn.wo, ConvMode::Pointwise1x1);
}

Tensor cross_attention_mafg(const wiener::DeconvStack& stack, const CrossAttentionParams& p, const WindowSpec& w) {
  if (stack.images.empty()) throw ContractError("cross-attention over an empty stack");
  Tensor t = stack.as_tensor();
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return cross_attention_mafg(numerics::reshape(t, s), stack.median_index, p, w);
}

Tensor enhance_query(const Tensor& q, std::size_t block_index, numerics::PoolSpec pool) {
  if (block_index % 2 == 0) return q;
  return numerics::sub(q, numerics::avg_pool(q, pool));
}

}  // namespace metalens::attention
