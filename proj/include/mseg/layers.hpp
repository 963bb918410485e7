#pragma once

#include <string>

#include "mseg/autograd.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Per-call forward settings: dropout is active only when `training` is
/// set, and then draws from `rng`.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
  Tensor operator()(const Tensor& x) const;
};

/// conv3x3 (no bias) -> GroupNorm(1) -> GELU
struct ConvNormAct {
  Tensor weight;
  LayerNorm norm;  // gamma/beta over channels
  int stride = 1;
  Tensor operator()(const Tensor& x) const;
};

/// Creates and registers parameters under a dotted name prefix.
///
/// Initialization: linear and attention weights from a normal truncated at
/// two standard deviations (std 0.02), biases zero, conv weights
/// Kaiming-normal on fan-in, norm gamma one and beta zero.
class ParamFactory {
 public:
  ParamFactory(ParameterStore& store, Rng& rng, DType dtype, std::string prefix = "");

  ParamFactory scope(const std::string& name) const;
  std::string full_name(const std::string& name) const;

  Tensor trunc_normal(const std::string& name, Shape shape, double stddev = 0.02);
  Tensor kaiming(const std::string& name, Shape shape, std::int64_t fan_in);
  Tensor constant(const std::string& name, Shape shape, double value);

  Linear linear(const std::string& name, std::int64_t in, std::int64_t out, bool bias = true);
  LayerNorm layer_norm(const std::string& name, std::int64_t channels);
  ConvNormAct conv_norm_act(const std::string& name, std::int64_t in, std::int64_t out, int stride);

  DType dtype() const { return dtype_; }
  Rng& rng() { return *rng_; }

 private:
  Tensor add(const std::string& name, Tensor t);

  ParameterStore* store_;
  Rng* rng_;
  DType dtype_;
  std::string prefix_;
};

}  // namespace mseg
