#include "mseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mseg/autograd.hpp"
#include "mseg/errors.hpp"
#include "mseg/losses.hpp"
#include "mseg/model.hpp"
#include "mseg/ops.hpp"

namespace mseg {

Tensor finite_difference_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  NoGradGuard no_grad;
  Tensor probe = x.detach();
  auto data = probe.mutable_data();
  std::vector<double> grad(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double fp = f(probe).item();
    data[i] = orig - h;
    const double fm = f(probe).item();
    data[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_data(x.shape(), std::move(grad), DType::f64);
}

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> leaves, double h, std::int64_t samples_per_leaf,
                                Rng& rng) {
  for (auto& leaf : leaves) {
    if (leaf.dtype() != DType::f64) throw ValidationError("gradient checks run in f64");
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  backward(loss_fn());
  GradCheckResult result;
  result.name = name;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad_data().begin(), leaf.grad_data().end());
    std::vector<std::size_t> coords(static_cast<std::size_t>(leaf.numel()));
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (static_cast<std::int64_t>(coords.size()) > samples_per_leaf) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(samples_per_leaf));
    }
    auto data = leaf.mutable_data();
    for (auto i : coords) {
      const double orig = data[i];
      auto central = [&](double step) {
        data[i] = orig + step;
        const double fp = loss_fn().item();
        data[i] = orig - step;
        const double fm = loss_fn().item();
        data[i] = orig;
        return (fp - fm) / (2.0 * step);
      };
      // Richardson extrapolation cancels the h² truncation term.
      const double numeric = (4.0 * central(0.5 * h) - central(h)) / 3.0;
      const double a = analytic.empty() ? 0.0 : analytic[i];
      result.max_rel_error = std::max(result.max_rel_error, gradient_relative_error(a, numeric));
      ++result.checked;
    }
    leaf.zero_grad();
  }
  return result;
}

namespace {

constexpr DType f64 = DType::f64;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

/// sum(out * R) for a fixed random R, so every output element matters.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

struct Case {
  std::string name;
  std::vector<Tensor> leaves;
  std::function<Tensor()> forward;
};

Tensor fixed_weights(const Shape& shape, Rng& rng) { return Tensor::randn(shape, rng, f64); }

}  // namespace

std::vector<GradCheckResult> run_op_gradient_suite(std::uint64_t seed, int rounds) {
  std::vector<GradCheckResult> results;
  Rng rng(seed);
  auto run = [&](const std::string& name, std::vector<Tensor> leaves,
                 const std::function<Tensor()>& fwd) {
    Tensor probe;
    {
      NoGradGuard g;
      probe = fwd();
    }
    const Tensor w = fixed_weights(probe.shape(), rng);
    auto loss = [&]() { return weighted_sum(fwd(), w); };
    results.push_back(check_gradients(name, loss, std::move(leaves), 1e-4, 24, rng));
  };

  for (int r = 0; r < rounds; ++r) {
    const auto B = pick(rng, 1, 2), C = pick(rng, 1, 4), H = pick(rng, 2, 5), W = pick(rng, 2, 5);

    {
      Tensor a = Tensor::randn({B, H, W}, rng, f64);
      Tensor b = Tensor::randn({H, 1}, rng, f64);
      run("add", {a, b}, [=] { return add(a, b); });
      run("sub", {a, b}, [=] { return sub(a, b); });
      run("mul", {a, b}, [=] { return mul(a, b); });
      Tensor d = add_scalar(Tensor::uniform({W}, rng, 0.0, 1.0, f64), 1.0).detach();
      run("div", {a, d}, [=] { return div(a, d); });
      run("scale", {a}, [=] { return scale(a, 0.37); });
      run("add_scalar", {a}, [=] { return add_scalar(a, -1.5); });
    }
    {
      const auto m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
      Tensor a = Tensor::randn({B, 2, m, k}, rng, f64);
      Tensor b = Tensor::randn({2, k, n}, rng, f64);
      run("matmul", {a, b}, [=] { return matmul(a, b); });
      Tensor x = Tensor::randn({B, m, k}, rng, f64);
      Tensor w = Tensor::randn({n, k}, rng, f64);
      Tensor bias = Tensor::randn({n}, rng, f64);
      run("linear", {x, w, bias}, [=] { return linear(x, w, bias); });
    }
    {
      const int stride = static_cast<int>(pick(rng, 1, 2));
      const int pad = static_cast<int>(pick(rng, 0, 1));
      const auto k = pick(rng, 1, 3);
      const auto Co = pick(rng, 1, 3);
      Tensor x = Tensor::randn({B, C, H + 2, W + 2}, rng, f64);
      Tensor w = Tensor::randn({Co, C, k, k}, rng, f64);
      Tensor b = Tensor::randn({Co}, rng, f64);
      run("conv2d", {x, w, b}, [=] { return conv2d(x, w, b, stride, pad); });
      Tensor wt = Tensor::randn({C, Co, k, k}, rng, f64);
      Tensor xs = Tensor::randn({B, C, H, W}, rng, f64);
      run("conv_transpose2d", {xs, wt, b}, [=] { return conv_transpose2d(xs, wt, b, stride); });
    }
    {
      Tensor x = Tensor::randn({B, H, W + 1}, rng, f64);
      Tensor g = Tensor::randn({W + 1}, rng, f64);
      Tensor b = Tensor::randn({W + 1}, rng, f64);
      run("layer_norm", {x, g, b}, [=] { return layer_norm(x, g, b); });
      const auto groups = pick(rng, 1, 2);
      Tensor xc = Tensor::randn({B, 2 * C, H, W}, rng, f64);
      Tensor gc = Tensor::randn({2 * C}, rng, f64);
      Tensor bc = Tensor::randn({2 * C}, rng, f64);
      run("group_norm", {xc, gc, bc},
          [=] { return group_norm(xc, static_cast<int>(groups), gc, bc); });
    }
    {
      const int axis = static_cast<int>(pick(rng, 0, 2));
      Tensor x = scale(Tensor::randn({B + 1, H, W}, rng, f64), 2.0).detach();
      run("softmax", {x}, [=] { return softmax(x, axis); });
      run("log_softmax", {x}, [=] { return log_softmax(x, axis); });
      run("gelu", {x}, [=] { return gelu(x); });
      const std::uint64_t mask_seed = rng();
      run("dropout", {x}, [=] {
        Rng local(mask_seed);
        return dropout(x, 0.3, true, local);
      });
      run("sum_axes", {x}, [=] { return sum_axes(x, {axis}); });
      run("mean_axis", {x}, [=] { return mean_axis(x, axis); });
      run("mean", {x}, [=] { return mean(x); });
      run("permute", {x}, [=] { return permute(x, {2, 0, 1}); });
      run("reshape", {x}, [=] { return reshape(x, {-1}); });
      run("slice", {x}, [=] { return slice(x, 1, 1, H - 1); });
      run("concat", {x}, [=] { return concat({x, scale(x, 2.0)}, axis); });
      run("index_select", {x}, [=] { return index_select(x, {B, 0, 0}); });
    }
    {
      Tensor x = Tensor::randn({B, H, W, C}, rng, f64);
      const auto dh = pick(rng, -3, 3), dw = pick(rng, -3, 3);
      run("cyclic_shift", {x}, [=] { return cyclic_shift(x, dh, dw); });
    }
  }
  return results;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.input_size = 16;
  c.patch = 2;
  c.embed_dim = 4;
  c.depths = {2, 2, 2, 2};
  c.heads = {1, 2, 2, 4};
  c.window = 2;
  c.num_classes = 3;
  c.mlp_ratio = 2.0;
  c.dtype = DType::f64;
  return c;
}

GradCheckResult check_model_gradients(const ModelConfig& config, std::uint64_t seed, std::int64_t samples_per_leaf) {
  if (config.dtype != DType::f64) throw ValidationError("gradient checks run in f64");
  if (config.variant == Variant::classifier) throw ValidationError("check_model_gradients needs a segmentation model");
  Model model(config, seed);
  Rng rng(seed + 1);
  const auto S = config.input_size;
  Tensor x = Tensor::randn({1, 3, S, S}, rng, DType::f64);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(S * S));
  std::uniform_int_distribution<int> cls(0, config.num_classes - 1);
  for (auto& l : labels) l = cls(rng);
  const auto target = make_label_map({1, S, S}, std::move(labels));
  const ClassWeights w(static_cast<std::size_t>(config.num_classes), 1.0);
  ForwardContext ctx;
  std::vector<Tensor> leaves{x};
  for (auto& [name, t] : model.parameters().entries()) leaves.push_back(t);
  return check_gradients(std::string("model/") + variant_name(config.variant),
                         [&] { return combined_loss(model.forward(x, ctx), target, w); }, leaves, 1e-5,
                         samples_per_leaf, rng);
}

}  // namespace mseg
