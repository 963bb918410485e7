#include "mseg/layers.hpp"

#include <cmath>

#include "mseg/ops.hpp"

namespace mseg {

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

Tensor ConvNormAct::operator()(const Tensor& x) const {
  return gelu(group_norm(conv2d(x, weight, Tensor(), stride, 1), 1, norm.gamma, norm.beta, norm.eps));
}

ParamFactory::ParamFactory(ParameterStore& store, Rng& rng, DType dtype, std::string prefix)
    : store_(&store), rng_(&rng), dtype_(dtype), prefix_(std::move(prefix)) {}

ParamFactory ParamFactory::scope(const std::string& name) const {
  return ParamFactory(*store_, *rng_, dtype_, full_name(name));
}

std::string ParamFactory::full_name(const std::string& name) const {
  return prefix_.empty() ? name : prefix_ + "." + name;
}

Tensor ParamFactory::add(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  return store_->add(full_name(name), std::move(t));
}

Tensor ParamFactory::trunc_normal(const std::string& name, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) {
    double z = dist(*rng_);
    while (std::abs(z) > 2.0) z = dist(*rng_);
    v = z * stddev;
  }
  return add(name, Tensor::from_data(std::move(shape), std::move(data), dtype_));
}

Tensor ParamFactory::kaiming(const std::string& name, Shape shape, std::int64_t fan_in) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return add(name, Tensor::randn(std::move(shape), *rng_, dtype_, stddev));
}

Tensor ParamFactory::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, dtype_));
}

Linear ParamFactory::linear(const std::string& name, std::int64_t in, std::int64_t out, bool bias) {
  auto s = scope(name);
  Linear l;
  l.weight = s.trunc_normal("weight", {out, in});
  if (bias) l.bias = s.constant("bias", {out}, 0.0);
  return l;
}

LayerNorm ParamFactory::layer_norm(const std::string& name, std::int64_t channels) {
  auto s = scope(name);
  LayerNorm n;
  n.gamma = s.constant("weight", {channels}, 1.0);
  n.beta = s.constant("bias", {channels}, 0.0);
  return n;
}

ConvNormAct ParamFactory::conv_norm_act(const std::string& name, std::int64_t in, std::int64_t out,
                                        int stride) {
  auto s = scope(name);
  ConvNormAct c;
  c.weight = s.kaiming("conv.weight", {out, in, 3, 3}, in * 9);
  c.norm = s.layer_norm("norm", out);
  c.stride = stride;
  return c;
}

}  // namespace mseg
