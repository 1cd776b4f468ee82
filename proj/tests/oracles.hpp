#pragma once

// Naive loop implementations used as references for the attention and
// rendering kernels.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "metalens/attention/attention.hpp"
#include "metalens/numerics/tensor.hpp"
#include "metalens/optics/psf.hpp"

namespace mltest::oracle {

using metalens::attention::AttentionParams;
using metalens::attention::CrossAttentionParams;
using metalens::attention::WindowSpec;
using metalens::numerics::Tensor;
using metalens::optics::PsfGrid;

using Field = std::vector<double>;  // [C][H][W] for one batch entry

// y[o] = sum_c w[o][c] x[c] at every pixel.
inline Field project(const Tensor& w, const Field& x, std::size_t HW) {
  const std::size_t O = w.dim(0), C = w.dim(1);
  Field y(O * HW, 0.0);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < HW; ++p) y[o * HW + p] += w.at({o, c}) * x[c * HW + p];
  return y;
}

inline Field batch_entry(const Tensor& t, std::size_t b) {
  const std::size_t n = t.numel() / t.dim(0);
  return Field(t.values().begin() + long(b * n), t.values().begin() + long((b + 1) * n));
}

inline std::size_t clampi(long v, std::size_t n) { return std::size_t(std::clamp<long>(v, 0, long(n) - 1)); }

// Window attention written per query pixel. q: [C,H,W]; keys/values: M fields [C,H,W].
inline Field window_oracle(const Field& q, const std::vector<Field>& k, const std::vector<Field>& v, std::size_t C,
                    std::size_t H, std::size_t W, std::size_t heads, const WindowSpec& spec) {
  const std::size_t w = spec.window, kv = spec.kv_window(), d = C / heads;
  const long pad = long((kv - w) / 2);
  Field out(C * H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const long y0 = long(y / w * w) - pad, x0 = long(x / w * w) - pad;
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> logits;
        std::vector<std::pair<std::size_t, std::size_t>> who;
        for (std::size_t m = 0; m < k.size(); ++m)
          for (std::size_t sy = 0; sy < kv; ++sy)
            for (std::size_t sx = 0; sx < kv; ++sx) {
              const std::size_t py = clampi(y0 + long(sy), H), px = clampi(x0 + long(sx), W);
              double s = 0;
              for (std::size_t dd = 0; dd < d; ++dd)
                s += q[((h * d + dd) * H + y) * W + x] * k[m][((h * d + dd) * H + py) * W + px];
              logits.push_back(s / std::sqrt(double(d)));
              who.emplace_back(m, py * W + px);
            }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0;
        for (auto& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t t = 0; t < logits.size(); ++t)
          for (std::size_t dd = 0; dd < d; ++dd)
            out[((h * d + dd) * H + y) * W + x] += logits[t] / z * v[who[t].first][(h * d + dd) * H * W + who[t].second];
      }
    }
  return out;
}

inline Tensor spatial_oracle(const Tensor& x, const AttentionParams& p, const WindowSpec& spec) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), HW = H * W;
  Field all;
  for (std::size_t b = 0; b < B; ++b) {
    const Field xb = batch_entry(x, b);
    const Field o = window_oracle(project(p.wq, xb, HW), {project(p.wk, xb, HW)}, {project(p.wv, xb, HW)}, C, H, W,
                                  p.heads, spec);
    const Field y = project(p.wo, o, HW);
    all.insert(all.end(), y.begin(), y.end());
  }
  return Tensor(x.shape(), all);
}

inline Tensor transposed_oracle(const Tensor& x, const AttentionParams& p) {
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), d = C / p.heads;
  Field all;
  for (std::size_t b = 0; b < B; ++b) {
    const Field xb = batch_entry(x, b);
    Field q = project(p.wq, xb, HW), k = project(p.wk, xb, HW), v = project(p.wv, xb, HW);
    for (Field* f : {&q, &k})
      for (std::size_t c = 0; c < C; ++c) {
        double n = 0;
        for (std::size_t i = 0; i < HW; ++i) n += (*f)[c * HW + i] * (*f)[c * HW + i];
        n = std::max(std::sqrt(n), 1e-12);
        for (std::size_t i = 0; i < HW; ++i) (*f)[c * HW + i] /= n;
      }
    Field o(C * HW, 0.0);
    for (std::size_t h = 0; h < p.heads; ++h)
      for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> a(d);
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0;
          for (std::size_t t = 0; t < HW; ++t) s += q[(h * d + i) * HW + t] * k[(h * d + j) * HW + t];
          a[j] = s * p.temperature.at({h});
        }
        const double mx = *std::max_element(a.begin(), a.end());
        double z = 0;
        for (auto& e : a) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j < d; ++j)
          for (std::size_t t = 0; t < HW; ++t) o[(h * d + i) * HW + t] += a[j] / z * v[(h * d + j) * HW + t];
      }
    const Field y = project(p.wo, o, HW);
    all.insert(all.end(), y.begin(), y.end());
  }
  return Tensor(x.shape(), all);
}

// Token-concatenation oracle for the MAFG cross-attention of one batch entry.
inline Tensor cross_oracle(const Tensor& stack, std::size_t median, const CrossAttentionParams& p, const WindowSpec& spec) {
  const std::size_t M = stack.dim(1), C = stack.dim(2), H = stack.dim(3), W = stack.dim(4), HW = H * W;
  std::vector<Field> e, k, v;
  for (std::size_t m = 0; m < M; ++m) {
    const Field img(stack.values().begin() + long(m * C * HW), stack.values().begin() + long((m + 1) * C * HW));
    e.push_back(project(p.embed, img, HW));
    k.push_back(project(p.attn.wk, e.back(), HW));
    v.push_back(project(p.attn.wv, e.back(), HW));
  }
  const std::size_t F = p.attn.dim;
  const Field o = window_oracle(project(p.attn.wq, e[median], HW), k, v, F, H, W, p.attn.heads, spec);
  return Tensor({1, F, H, W}, project(p.attn.wo, o, HW));
}

// Per-patch circular convolution written directly from the definition.
inline Tensor patchwise_oracle(const Tensor& img, const PsfGrid& g) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const std::size_t ph = H / g.grid.rows, pw = W / g.grid.cols, k = g.kernel_extent();
  const long r = long(k / 2);
  std::vector<double> out(C * H * W, 0.0);
  for (std::size_t gr = 0; gr < g.grid.rows; ++gr)
    for (std::size_t gc = 0; gc < g.grid.cols; ++gc)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x) {
            double s = 0;
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long sy = ((long(y) - (long(i) - r)) % long(ph) + long(ph)) % long(ph);
                const long sx = ((long(x) - (long(j) - r)) % long(pw) + long(pw)) % long(pw);
                s += g.at(gr, gc).tap(c, i, j) * img.at({c, gr * ph + std::size_t(sy), gc * pw + std::size_t(sx)});
              }
            out[(c * H + gr * ph + y) * W + gc * pw + x] = s;
          }
  return Tensor({C, H, W}, out);
}

}  // namespace mltest::oracle
