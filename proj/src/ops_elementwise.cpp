#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

namespace {

using Index = std::vector<std::int64_t>;

int normalize_axis(int axis, int ndim) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw ValidationError("axis out of range");
  return axis;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ValidationError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// For each flat index of `out`, the flat index into a tensor of shape `in`
/// broadcast against it.
std::shared_ptr<Index> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t n = out.size();
  std::vector<std::int64_t> stride(n, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = n - 1 - k;
    stride[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  auto idx = std::make_shared<Index>(static_cast<std::size_t>(numel(out)));
  std::vector<std::int64_t> counter(n, 0);
  std::int64_t offset = 0;
  for (auto& v : *idx) {
    v = offset;
    for (std::size_t k = n; k-- > 0;) {
      ++counter[k];
      offset += stride[k];
      if (counter[k] < out[k]) break;
      offset -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return idx;
}

enum class BinOp { add, sub, mul, div };

Tensor binary(BinOp op, const char* name, const Tensor& a, const Tensor& b) {
  const Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shapes(a.shape(), b.shape());
  auto out = detail::make_node(name, out_shape, promote(a.dtype(), b.dtype()), {a, b});
  std::shared_ptr<Index> ia, ib;
  if (a.shape() != out_shape) ia = broadcast_index(a.shape(), out_shape);
  if (b.shape() != out_shape) ib = broadcast_index(b.shape(), out_shape);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  auto& od = out->data;
  const std::size_t n = od.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[ia ? static_cast<std::size_t>((*ia)[i]) : i];
    const double y = bd[ib ? static_cast<std::size_t>((*ib)[i]) : i];
    switch (op) {
      case BinOp::add: od[i] = x + y; break;
      case BinOp::sub: od[i] = x - y; break;
      case BinOp::mul: od[i] = x * y; break;
      case BinOp::div: od[i] = x / y; break;
    }
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [op, ia, ib](Node& self) {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const bool ga = na.requires_grad, gb = nb.requires_grad;
      if (ga) na.ensure_grad();
      if (gb) nb.ensure_grad();
      const std::size_t n = self.grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ja = ia ? static_cast<std::size_t>((*ia)[i]) : i;
        const std::size_t jb = ib ? static_cast<std::size_t>((*ib)[i]) : i;
        const double g = self.grad[i];
        switch (op) {
          case BinOp::add:
            if (ga) na.grad[ja] += g;
            if (gb) nb.grad[jb] += g;
            break;
          case BinOp::sub:
            if (ga) na.grad[ja] += g;
            if (gb) nb.grad[jb] -= g;
            break;
          case BinOp::mul:
            if (ga) na.grad[ja] += g * nb.data[jb];
            if (gb) nb.grad[jb] += g * na.data[ja];
            break;
          case BinOp::div: {
            const double y = nb.data[jb];
            if (ga) na.grad[ja] += g / y;
            if (gb) nb.grad[jb] -= g * na.data[ja] / (y * y);
            break;
          }
        }
      }
    };
  }
  return Tensor(out);
}

/// out[i] = x[src[i]]; gradients scatter back through the same map.
Tensor gather(const char* name, const Tensor& x, Shape shape, std::shared_ptr<Index> src) {
  auto out = detail::make_node(name, std::move(shape), x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = xd[static_cast<std::size_t>((*src)[i])];
  if (out->requires_grad) {
    out->backward = [src](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        in.grad[static_cast<std::size_t>((*src)[i])] += self.grad[i];
      }
    };
  }
  return Tensor(out);
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t k = shape.size(); k-- > 1;) s[k - 1] = s[k] * shape[k];
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinOp::div, "div", a, b); }

Tensor scale(const Tensor& x, double factor) {
  auto out = detail::make_node("scale", x.shape(), x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] * factor;
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [factor](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * factor;
    };
  }
  return Tensor(out);
}

Tensor add_scalar(const Tensor& x, double value) {
  auto out = detail::make_node("add_scalar", x.shape(), x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] + value;
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& x) {
  auto out = detail::make_node("gelu", x.shape(), x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    out->data[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * M_SQRT1_2));
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = in.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        in.grad[i] += self.grad[i] * (cdf + v * pdf);
      }
    };
  }
  return Tensor(out);
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.node()->data.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : *mask) m = u(rng) < p ? 0.0 : keep_scale;
  auto out = detail::make_node("dropout", x.shape(), x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] * (*mask)[i];
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [mask](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * (*mask)[i];
    };
  }
  return Tensor(out);
}

Tensor sum(const Tensor& x) {
  auto out = detail::make_node("sum", {1}, x.dtype(), {x});
  double s = 0.0;
  for (double v : x.node()->data) s += v;
  out->data[0] = s;
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (auto& g : in.grad) g += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axes(const Tensor& x, std::vector<int> axes) {
  const int nd = x.ndim();
  std::vector<bool> reduce(static_cast<std::size_t>(nd), false);
  for (int& a : axes) reduce[static_cast<std::size_t>(normalize_axis(a, nd))] = true;
  Shape out_shape;
  for (int k = 0; k < nd; ++k) {
    if (!reduce[static_cast<std::size_t>(k)]) out_shape.push_back(x.shape()[static_cast<std::size_t>(k)]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  // Map every input element to its output slot.
  Shape kept_shape = x.shape();
  for (int k = 0; k < nd; ++k) {
    if (reduce[static_cast<std::size_t>(k)]) kept_shape[static_cast<std::size_t>(k)] = 1;
  }
  auto dst = broadcast_index(kept_shape, x.shape());
  auto out = detail::make_node("sum_axes", out_shape, x.dtype(), {x});
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) out->data[static_cast<std::size_t>((*dst)[i])] += xd[i];
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [dst](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < in.grad.size(); ++i) {
        in.grad[i] += self.grad[static_cast<std::size_t>((*dst)[i])];
      }
    };
  }
  return Tensor(out);
}

Tensor mean_axis(const Tensor& x, int axis) {
  const int a = normalize_axis(axis, x.ndim());
  return scale(sum_axes(x, {a}), 1.0 / static_cast<double>(x.shape()[static_cast<std::size_t>(a)]));
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (shape[k] == -1) {
      if (infer >= 0) throw ValidationError("reshape: at most one inferred dimension");
      infer = static_cast<int>(k);
    } else {
      known *= shape[k];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw ValidationError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto out = detail::make_node("reshape", std::move(shape), x.dtype(), {x});
  out->data = x.node()->data;
  if (out->requires_grad) {
    out->backward = [](Node& self) {
      Node& in = *self.inputs[0];
      in.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int nd = x.ndim();
  if (static_cast<int>(perm.size()) != nd) throw ValidationError("permute: rank mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(nd), false);
  Shape out_shape(static_cast<std::size_t>(nd));
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(nd));
  const auto in_stride = strides_of(x.shape());
  for (int k = 0; k < nd; ++k) {
    const int p = normalize_axis(perm[static_cast<std::size_t>(k)], nd);
    if (seen[static_cast<std::size_t>(p)]) throw ValidationError("permute: repeated axis");
    seen[static_cast<std::size_t>(p)] = true;
    out_shape[static_cast<std::size_t>(k)] = x.shape()[static_cast<std::size_t>(p)];
    src_stride[static_cast<std::size_t>(k)] = in_stride[static_cast<std::size_t>(p)];
  }
  auto src = std::make_shared<Index>(static_cast<std::size_t>(x.numel()));
  std::vector<std::int64_t> counter(static_cast<std::size_t>(nd), 0);
  std::int64_t offset = 0;
  for (auto& v : *src) {
    v = offset;
    for (std::size_t k = static_cast<std::size_t>(nd); k-- > 0;) {
      ++counter[k];
      offset += src_stride[k];
      if (counter[k] < out_shape[k]) break;
      offset -= src_stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return gather("permute", x, std::move(out_shape), std::move(src));
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  std::vector<int> perm(static_cast<std::size_t>(x.ndim()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[static_cast<std::size_t>(normalize_axis(axis0, x.ndim()))],
            perm[static_cast<std::size_t>(normalize_axis(axis1, x.ndim()))]);
  return permute(x, perm);
}

Tensor cyclic_shift(const Tensor& x, std::int64_t dh, std::int64_t dw) {
  if (x.ndim() != 4) throw ValidationError("cyclic_shift expects [B,H,W,C]");
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::int64_t sh = ((dh % H) + H) % H;
  const std::int64_t sw = ((dw % W) + W) % W;
  auto src = std::make_shared<Index>(static_cast<std::size_t>(x.numel()));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < H; ++i) {
      const std::int64_t si = (i - sh + H) % H;
      for (std::int64_t j = 0; j < W; ++j) {
        const std::int64_t sj = (j - sw + W) % W;
        const std::int64_t base = ((b * H + si) * W + sj) * C;
        for (std::int64_t c = 0; c < C; ++c) (*src)[o++] = base + c;
      }
    }
  }
  return gather("cyclic_shift", x, x.shape(), std::move(src));
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = normalize_axis(axis, x.ndim());
  const auto d = x.shape()[static_cast<std::size_t>(a)];
  if (start < 0 || length < 1 || start + length > d) throw ValidationError("slice out of range");
  std::int64_t outer = 1, inner = 1;
  for (int k = 0; k < a; ++k) outer *= x.shape()[static_cast<std::size_t>(k)];
  for (int k = a + 1; k < x.ndim(); ++k) inner *= x.shape()[static_cast<std::size_t>(k)];
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  auto src = std::make_shared<Index>(static_cast<std::size_t>(outer * length * inner));
  std::size_t o = 0;
  for (std::int64_t p = 0; p < outer; ++p) {
    for (std::int64_t k = 0; k < length; ++k) {
      const std::int64_t base = (p * d + start + k) * inner;
      for (std::int64_t i = 0; i < inner; ++i) (*src)[o++] = base + i;
    }
  }
  return gather("slice", x, std::move(out_shape), std::move(src));
}

Tensor index_select(const Tensor& x, const std::vector<std::int64_t>& indices) {
  const auto rows = x.dim(0);
  const std::int64_t row_len = x.numel() / rows;
  auto src = std::make_shared<Index>(indices.size() * static_cast<std::size_t>(row_len));
  std::size_t o = 0;
  for (auto r : indices) {
    if (r < 0 || r >= rows) throw ValidationError("index_select: index out of range");
    for (std::int64_t i = 0; i < row_len; ++i) (*src)[o++] = r * row_len + i;
  }
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(indices.size());
  return gather("index_select", x, std::move(out_shape), std::move(src));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ValidationError("concat of zero tensors");
  const int nd = parts[0].ndim();
  const int a = normalize_axis(axis, nd);
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(a)] = 0;
  DType dtype = parts[0].dtype();
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ValidationError("concat: rank mismatch");
    for (int k = 0; k < nd; ++k) {
      if (k != a && p.shape()[static_cast<std::size_t>(k)] != parts[0].shape()[static_cast<std::size_t>(k)]) {
        throw ValidationError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                              shape_str(parts[0].shape()));
      }
    }
    out_shape[static_cast<std::size_t>(a)] += p.shape()[static_cast<std::size_t>(a)];
    dtype = promote(dtype, p.dtype());
  }
  std::int64_t outer = 1, inner = 1;
  for (int k = 0; k < a; ++k) outer *= out_shape[static_cast<std::size_t>(k)];
  for (int k = a + 1; k < nd; ++k) inner *= out_shape[static_cast<std::size_t>(k)];
  const std::int64_t total = out_shape[static_cast<std::size_t>(a)];
  auto out = detail::make_node("concat", out_shape, dtype, parts);
  std::vector<std::int64_t> widths;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t d = p.shape()[static_cast<std::size_t>(a)];
    widths.push_back(d);
    const auto& pd = p.node()->data;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + o * d * inner, d * inner, out->data.begin() + (o * total + offset) * inner);
    }
    offset += d;
  }
  detail::round_output(*out);
  if (out->requires_grad) {
    out->backward = [widths, outer, inner, total](Node& self) {
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        const std::int64_t d = widths[k];
        if (in.requires_grad) {
          in.ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* g = self.grad.data() + (o * total + offset) * inner;
            double* dst = in.grad.data() + o * d * inner;
            for (std::int64_t i = 0; i < d * inner; ++i) dst[i] += g[i];
          }
        }
        offset += d;
      }
    };
  }
  return Tensor(out);
}

}  // namespace mseg
