#include <algorithm>
#include <cmath>
#include <memory>

#include "mseg/errors.hpp"
#include "mseg/ops.hpp"
#include "mseg/parallel.hpp"

namespace mseg {

namespace {

int normalize_axis(int axis, int ndim) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ValidationError("axis out of range");
  return axis;
}

constexpr std::int64_t kGrain = 4096;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ValidationError("matmul needs rank >= 2 operands");
  const auto m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw ValidationError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " @ " +
                          shape_str(b.shape()));
  }
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const std::size_t nb = std::max(abatch.size(), bbatch.size());
  Shape batch(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    const std::int64_t da = i < nb - abatch.size() ? 1 : abatch[i - (nb - abatch.size())];
    const std::int64_t db = i < nb - bbatch.size() ? 1 : bbatch[i - (nb - bbatch.size())];
    if (da != db && da != 1 && db != 1) {
      throw ValidationError("matmul: batch dimensions do not broadcast");
    }
    batch[i] = std::max(da, db);
  }
  // Per output batch, the matrix offsets into a and b.
  const std::int64_t nbatch = numel(batch);
  auto offsets = std::make_shared<std::vector<std::pair<std::int64_t, std::int64_t>>>(
      static_cast<std::size_t>(nbatch));
  {
    std::vector<std::int64_t> idx(nb, 0);
    for (std::int64_t t = 0; t < nbatch; ++t) {
      std::int64_t oa = 0, ob = 0;
      for (std::size_t i = 0; i < nb; ++i) {
        const std::int64_t da = i < nb - abatch.size() ? 1 : abatch[i - (nb - abatch.size())];
        const std::int64_t db = i < nb - bbatch.size() ? 1 : bbatch[i - (nb - bbatch.size())];
        oa = oa * da + (da == 1 ? 0 : idx[i]);
        ob = ob * db + (db == 1 ? 0 : idx[i]);
      }
      (*offsets)[static_cast<std::size_t>(t)] = {oa * m * k, ob * k * n};
      for (std::size_t i = nb; i-- > 0;) {
        if (++idx[i] < batch[i]) break;
        idx[i] = 0;
      }
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = detail::make_node("matmul", out_shape, promote(a.dtype(), b.dtype()), {a, b});
  const double* ad = a.node()->data.data();
  const double* bd = b.node()->data.data();
  double* od = out->data.data();
  parallel_for(nbatch, std::max<std::int64_t>(1, kGrain / std::max<std::int64_t>(1, m * n * k)),
               [&](std::int64_t t0, std::int64_t t1) {
                 for (std::int64_t t = t0; t < t1; ++t) {
                   const auto [oa, ob] = (*offsets)[static_cast<std::size_t>(t)];
                   double* o = od + t * m * n;
                   for (std::int64_t i = 0; i < m; ++i) {
                     for (std::int64_t p = 0; p < k; ++p) {
                       const double av = ad[oa + i * k + p];
                       const double* brow = bd + ob + p * n;
                       double* orow = o + i * n;
                       for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                     }
                   }
                 }
               });
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [offsets, m, k, n](Node& self) {
      Node& na = *self.inputs[0];
      Node& nbn = *self.inputs[1];
      if (na.requires_grad) na.ensure_grad();
      if (nbn.requires_grad) nbn.ensure_grad();
      for (std::size_t t = 0; t < offsets->size(); ++t) {
        const auto [oa, ob] = (*offsets)[t];
        const double* g = self.grad.data() + static_cast<std::int64_t>(t) * m * n;
        if (na.requires_grad) {
          for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t p = 0; p < k; ++p) {
              const double* brow = nbn.data.data() + ob + p * n;
              const double* grow = g + i * n;
              double s = 0.0;
              for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
              na.grad[static_cast<std::size_t>(oa + i * k + p)] += s;
            }
          }
        }
        if (nbn.requires_grad) {
          for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t p = 0; p < k; ++p) {
              const double av = na.data[static_cast<std::size_t>(oa + i * k + p)];
              double* dst = nbn.grad.data() + ob + p * n;
              const double* grow = g + i * n;
              for (std::int64_t j = 0; j < n; ++j) dst[j] += av * grow[j];
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2) throw ValidationError("linear: weight must be [out, in]");
  const auto in = weight.dim(1), outd = weight.dim(0);
  if (x.dim(-1) != in) {
    throw ValidationError("linear: input features " + std::to_string(x.dim(-1)) +
                          " != weight in-features " + std::to_string(in));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != outd)) {
    throw ValidationError("linear: bias shape mismatch");
  }
  const std::int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  DType dtype = promote(x.dtype(), weight.dtype());
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  auto out = detail::make_node("linear", out_shape, dtype, inputs);
  const double* xd = x.node()->data.data();
  const double* wd = weight.node()->data.data();
  const double* bd = has_bias ? bias.node()->data.data() : nullptr;
  double* od = out->data.data();
  parallel_for(rows, std::max<std::int64_t>(1, kGrain / std::max<std::int64_t>(1, in * outd)),
               [&](std::int64_t r0, std::int64_t r1) {
                 for (std::int64_t r = r0; r < r1; ++r) {
                   const double* xr = xd + r * in;
                   for (std::int64_t o = 0; o < outd; ++o) {
                     const double* wr = wd + o * in;
                     double s = bd ? bd[o] : 0.0;
                     for (std::int64_t i = 0; i < in; ++i) s += xr[i] * wr[i];
                     od[r * outd + o] = s;
                   }
                 }
               });
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [rows, in, outd, has_bias](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      const double* g = self.grad.data();
      if (nx.requires_grad) {
        nx.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          double* dx = nx.grad.data() + r * in;
          for (std::int64_t o = 0; o < outd; ++o) {
            const double gv = g[r * outd + o];
            if (gv == 0.0) continue;
            const double* wr = nw.data.data() + o * in;
            for (std::int64_t i = 0; i < in; ++i) dx[i] += gv * wr[i];
          }
        }
      }
      if (nw.requires_grad) {
        nw.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* xr = nx.data.data() + r * in;
          for (std::int64_t o = 0; o < outd; ++o) {
            const double gv = g[r * outd + o];
            if (gv == 0.0) continue;
            double* dw = nw.grad.data() + o * in;
            for (std::int64_t i = 0; i < in; ++i) dw[i] += gv * xr[i];
          }
        }
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Node& nb = *self.inputs[2];
        nb.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t o = 0; o < outd; ++o) nb.grad[static_cast<std::size_t>(o)] += g[r * outd + o];
        }
      }
    };
  }
  return Tensor(out);
}

namespace {

struct ConvGeom {
  std::int64_t B, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo;
  std::int64_t K() const { return Ci * kh * kw; }
  std::int64_t P() const { return Ho * Wo; }
};

void im2col(const ConvGeom& g, const double* x, double* col) {
  const std::int64_t P = g.P();
  for (std::int64_t ci = 0; ci < g.Ci; ++ci) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = col + ((ci * g.kh + i) * g.kw + j) * P;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t h = oh * g.stride + i - g.pad;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t w = ow * g.stride + j - g.pad;
            row[oh * g.Wo + ow] =
                (h >= 0 && h < g.H && w >= 0 && w < g.W) ? x[(ci * g.H + h) * g.W + w] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeom& g, const double* col, double* x) {
  const std::int64_t P = g.P();
  for (std::int64_t ci = 0; ci < g.Ci; ++ci) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((ci * g.kh + i) * g.kw + j) * P;
        for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
          const std::int64_t h = oh * g.stride + i - g.pad;
          if (h < 0 || h >= g.H) continue;
          for (std::int64_t ow = 0; ow < g.Wo; ++ow) {
            const std::int64_t w = ow * g.stride + j - g.pad;
            if (w >= 0 && w < g.W) x[(ci * g.H + h) * g.W + w] += row[oh * g.Wo + ow];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (x.ndim() != 4 || weight.ndim() != 4) throw ValidationError("conv2d expects 4-d input and weight");
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
  ConvGeom g{};
  g.B = x.dim(0);
  g.Ci = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Co = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.Ci) throw ValidationError("conv2d: input channels do not match weight");
  if (g.kh > g.H + 2 * padding || g.kw > g.W + 2 * padding) {
    throw ValidationError("conv2d: kernel larger than padded input");
  }
  g.Ho = (g.H + 2 * padding - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != g.Co)) throw ValidationError("conv2d: bias shape");
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  auto out = detail::make_node("conv2d", {g.B, g.Co, g.Ho, g.Wo}, promote(x.dtype(), weight.dtype()),
                               inputs);
  const std::int64_t K = g.K(), P = g.P();
  std::vector<double> col(static_cast<std::size_t>(K * P));
  const double* wd = weight.node()->data.data();
  for (std::int64_t b = 0; b < g.B; ++b) {
    im2col(g, x.node()->data.data() + b * g.Ci * g.H * g.W, col.data());
    double* ob = out->data.data() + b * g.Co * P;
    parallel_for(g.Co, std::max<std::int64_t>(1, kGrain / std::max<std::int64_t>(1, K * P)),
                 [&](std::int64_t c0, std::int64_t c1) {
                   for (std::int64_t co = c0; co < c1; ++co) {
                     double* orow = ob + co * P;
                     const double bv = has_bias ? bias.node()->data[static_cast<std::size_t>(co)] : 0.0;
                     std::fill(orow, orow + P, bv);
                     for (std::int64_t kk = 0; kk < K; ++kk) {
                       const double wv = wd[co * K + kk];
                       const double* crow = col.data() + kk * P;
                       for (std::int64_t p = 0; p < P; ++p) orow[p] += wv * crow[p];
                     }
                   }
                 });
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [g, has_bias](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      const std::int64_t K = g.K(), P = g.P();
      std::vector<double> col(static_cast<std::size_t>(K * P));
      std::vector<double> gcol;
      if (nx.requires_grad) {
        nx.ensure_grad();
        gcol.resize(static_cast<std::size_t>(K * P));
      }
      if (nw.requires_grad) nw.ensure_grad();
      for (std::int64_t b = 0; b < g.B; ++b) {
        const double* gb = self.grad.data() + b * g.Co * P;
        if (nw.requires_grad) {
          im2col(g, nx.data.data() + b * g.Ci * g.H * g.W, col.data());
          for (std::int64_t co = 0; co < g.Co; ++co) {
            const double* grow = gb + co * P;
            for (std::int64_t kk = 0; kk < K; ++kk) {
              const double* crow = col.data() + kk * P;
              double s = 0.0;
              for (std::int64_t p = 0; p < P; ++p) s += grow[p] * crow[p];
              nw.grad[static_cast<std::size_t>(co * K + kk)] += s;
            }
          }
        }
        if (nx.requires_grad) {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          for (std::int64_t co = 0; co < g.Co; ++co) {
            const double* grow = gb + co * P;
            for (std::int64_t kk = 0; kk < K; ++kk) {
              const double wv = nw.data[static_cast<std::size_t>(co * K + kk)];
              double* dst = gcol.data() + kk * P;
              for (std::int64_t p = 0; p < P; ++p) dst[p] += wv * grow[p];
            }
          }
          col2im_add(g, gcol.data(), nx.grad.data() + b * g.Ci * g.H * g.W);
        }
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Node& nb = *self.inputs[2];
        nb.ensure_grad();
        for (std::int64_t b = 0; b < g.B; ++b) {
          for (std::int64_t co = 0; co < g.Co; ++co) {
            const double* grow = self.grad.data() + (b * g.Co + co) * P;
            double s = 0.0;
            for (std::int64_t p = 0; p < P; ++p) s += grow[p];
            nb.grad[static_cast<std::size_t>(co)] += s;
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  if (x.ndim() != 4 || weight.ndim() != 4) {
    throw ValidationError("conv_transpose2d expects 4-d input and weight");
  }
  if (stride < 1) throw ValidationError("conv_transpose2d: stride must be >= 1");
  const auto B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (weight.dim(0) != Ci) throw ValidationError("conv_transpose2d: input channels do not match weight");
  const auto Co = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const std::int64_t Ho = (H - 1) * stride + kh, Wo = (W - 1) * stride + kw;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != Co)) {
    throw ValidationError("conv_transpose2d: bias shape");
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  auto out = detail::make_node("conv_transpose2d", {B, Co, Ho, Wo}, promote(x.dtype(), weight.dtype()),
                               inputs);
  const double* xd = x.node()->data.data();
  const double* wd = weight.node()->data.data();
  double* od = out->data.data();
  const std::int64_t s = stride;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < Co; ++co) {
      double* oc = od + (b * Co + co) * Ho * Wo;
      const double bv = has_bias ? bias.node()->data[static_cast<std::size_t>(co)] : 0.0;
      std::fill(oc, oc + Ho * Wo, bv);
      for (std::int64_t ci = 0; ci < Ci; ++ci) {
        const double* xc = xd + (b * Ci + ci) * H * W;
        for (std::int64_t i = 0; i < kh; ++i) {
          for (std::int64_t j = 0; j < kw; ++j) {
            const double wv = wd[((ci * Co + co) * kh + i) * kw + j];
            for (std::int64_t h = 0; h < H; ++h) {
              double* orow = oc + (h * s + i) * Wo + j;
              const double* xrow = xc + h * W;
              for (std::int64_t w = 0; w < W; ++w) orow[w * s] += wv * xrow[w];
            }
          }
        }
      }
    }
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [B, Ci, H, W, Co, kh, kw, Ho, Wo, s, has_bias](Node& self) {
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      if (nx.requires_grad) nx.ensure_grad();
      if (nw.requires_grad) nw.ensure_grad();
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t co = 0; co < Co; ++co) {
          const double* gc = self.grad.data() + (b * Co + co) * Ho * Wo;
          for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const std::size_t xoff = static_cast<std::size_t>((b * Ci + ci) * H * W);
            for (std::int64_t i = 0; i < kh; ++i) {
              for (std::int64_t j = 0; j < kw; ++j) {
                const std::size_t widx = static_cast<std::size_t>(((ci * Co + co) * kh + i) * kw + j);
                const double wv = nw.data[widx];
                double wacc = 0.0;
                for (std::int64_t h = 0; h < H; ++h) {
                  const double* grow = gc + (h * s + i) * Wo + j;
                  for (std::int64_t w = 0; w < W; ++w) {
                    const double gv = grow[w * s];
                    const std::size_t xi = xoff + static_cast<std::size_t>(h * W + w);
                    if (nx.requires_grad) nx.grad[xi] += gv * wv;
                    wacc += gv * nx.data[xi];
                  }
                }
                if (nw.requires_grad) nw.grad[widx] += wacc;
              }
            }
          }
        }
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        Node& nb = *self.inputs[2];
        nb.ensure_grad();
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t co = 0; co < Co; ++co) {
            const double* gc = self.grad.data() + (b * Co + co) * Ho * Wo;
            double acc = 0.0;
            for (std::int64_t p = 0; p < Ho * Wo; ++p) acc += gc[p];
            nb.grad[static_cast<std::size_t>(co)] += acc;
          }
        }
      }
    };
  }
  return Tensor(out);
}

namespace {

/// Shared normalization kernel: `groups_total` independent groups of
/// `group_len` contiguous elements; affine parameter for element e of group q
/// is param_index(q, e).
template <class ParamIndex>
Tensor normalize_groups(const char* name, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps, std::int64_t groups_total, std::int64_t group_len,
                        ParamIndex param_index) {
  auto out = detail::make_node(name, x.shape(), promote(x.dtype(), gamma.dtype()), {x, gamma, beta});
  auto xhat = std::make_shared<std::vector<double>>(x.node()->data.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups_total));
  const double* xd = x.node()->data.data();
  const double* gd = gamma.node()->data.data();
  const double* bd = beta.node()->data.data();
  for (std::int64_t q = 0; q < groups_total; ++q) {
    const double* xs = xd + q * group_len;
    double mu = 0.0;
    for (std::int64_t e = 0; e < group_len; ++e) mu += xs[e];
    mu /= static_cast<double>(group_len);
    double var = 0.0;
    for (std::int64_t e = 0; e < group_len; ++e) var += (xs[e] - mu) * (xs[e] - mu);
    var /= static_cast<double>(group_len);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[static_cast<std::size_t>(q)] = r;
    for (std::int64_t e = 0; e < group_len; ++e) {
      const std::size_t i = static_cast<std::size_t>(q * group_len + e);
      const double h = (xs[e] - mu) * r;
      (*xhat)[i] = h;
      const auto pi = param_index(q, e);
      out->data[i] = h * gd[pi] + bd[pi];
    }
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [xhat, rstd, groups_total, group_len, param_index](Node& self) {
      Node& nx = *self.inputs[0];
      Node& ng = *self.inputs[1];
      Node& nb = *self.inputs[2];
      if (nx.requires_grad) nx.ensure_grad();
      if (ng.requires_grad) ng.ensure_grad();
      if (nb.requires_grad) nb.ensure_grad();
      const double inv_n = 1.0 / static_cast<double>(group_len);
      for (std::int64_t q = 0; q < groups_total; ++q) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::int64_t e = 0; e < group_len; ++e) {
          const std::size_t i = static_cast<std::size_t>(q * group_len + e);
          const auto pi = param_index(q, e);
          const double gv = self.grad[i];
          if (ng.requires_grad) ng.grad[pi] += gv * (*xhat)[i];
          if (nb.requires_grad) nb.grad[pi] += gv;
          const double dh = gv * ng.data[pi];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[i];
        }
        if (!nx.requires_grad) continue;
        mean_dh *= inv_n;
        mean_dh_h *= inv_n;
        const double r = (*rstd)[static_cast<std::size_t>(q)];
        for (std::int64_t e = 0; e < group_len; ++e) {
          const std::size_t i = static_cast<std::size_t>(q * group_len + e);
          const double dh = self.grad[i] * ng.data[param_index(q, e)];
          nx.grad[i] += r * (dh - mean_dh - (*xhat)[i] * mean_dh_h);
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto C = x.dim(-1);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ValidationError("layer_norm: gamma/beta must have " + std::to_string(C) + " elements");
  }
  return normalize_groups("layer_norm", x, gamma, beta, eps, x.numel() / C, C,
                          [C](std::int64_t, std::int64_t e) { return static_cast<std::size_t>(e % C); });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() < 2) throw ValidationError("group_norm expects [B, C, ...]");
  const auto B = x.dim(0), C = x.dim(1);
  if (groups < 1 || C % groups != 0) throw ValidationError("group_norm: channels not divisible by groups");
  if (gamma.numel() != C || beta.numel() != C) throw ValidationError("group_norm: gamma/beta size");
  const std::int64_t spatial = x.numel() / (B * C);
  const std::int64_t cpg = C / groups;
  return normalize_groups("group_norm", x, gamma, beta, eps, B * groups, cpg * spatial,
                          [groups, cpg, spatial](std::int64_t q, std::int64_t e) {
                            return static_cast<std::size_t>((q % groups) * cpg + e / spatial);
                          });
}

namespace {

Tensor softmax_impl(const Tensor& x, int axis, bool log_space) {
  const int a = normalize_axis(axis, x.ndim());
  std::int64_t outer = 1, inner = 1;
  for (int k = 0; k < a; ++k) outer *= x.shape()[static_cast<std::size_t>(k)];
  for (int k = a + 1; k < x.ndim(); ++k) inner *= x.shape()[static_cast<std::size_t>(k)];
  const std::int64_t d = x.shape()[static_cast<std::size_t>(a)];
  auto out = detail::make_node(log_space ? "log_softmax" : "softmax", x.shape(), x.dtype(), {x});
  // Probabilities are kept for the backward pass in both modes.
  auto probs = std::make_shared<std::vector<double>>(x.node()->data.size());
  const double* xd = x.node()->data.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * d * inner + i;
      double mx = xd[base];
      for (std::int64_t k = 1; k < d; ++k) mx = std::max(mx, xd[base + k * inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < d; ++k) z += std::exp(xd[base + k * inner] - mx);
      const double logz = std::log(z);
      for (std::int64_t k = 0; k < d; ++k) {
        const std::size_t idx = static_cast<std::size_t>(base + k * inner);
        const double ls = xd[idx] - mx - logz;
        (*probs)[idx] = std::exp(ls);
        out->data[idx] = log_space ? ls : (*probs)[idx];
      }
    }
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [probs, outer, inner, d, log_space](Node& self) {
      Node& nx = *self.inputs[0];
      nx.ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * d * inner + i;
          double dot = 0.0;
          for (std::int64_t k = 0; k < d; ++k) {
            const std::size_t idx = static_cast<std::size_t>(base + k * inner);
            dot += log_space ? self.grad[idx] : self.grad[idx] * (*probs)[idx];
          }
          for (std::int64_t k = 0; k < d; ++k) {
            const std::size_t idx = static_cast<std::size_t>(base + k * inner);
            const double p = (*probs)[idx];
            nx.grad[idx] += log_space ? self.grad[idx] - p * dot : p * (self.grad[idx] - dot);
          }
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(const Tensor& x, int axis) { return softmax_impl(x, axis, true); }

}  // namespace mseg
