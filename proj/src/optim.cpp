#include "mseg/optim.hpp"

#include <cmath>

#include "mseg/errors.hpp"

namespace mseg {

void adamw_step(Tensor& param, std::span<const double> grad, OptimizerState& state, double lr,
                const AdamHyper& hyper) {
  const auto n = static_cast<std::size_t>(param.numel());
  if (grad.size() != n) throw ValidationError("adamw_step: gradient shape does not match parameter");
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  auto p = param.mutable_data();
  const DType dtype = param.dtype();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    const double old = p[i];
    p[i] = round_to(dtype, old - lr * (mhat / (std::sqrt(vhat) + hyper.eps)) - lr * hyper.weight_decay * old);
  }
}

void adam_step(Tensor& param, std::span<const double> grad, OptimizerState& state, double lr,
               AdamHyper hyper) {
  hyper.weight_decay = 0.0;
  adamw_step(param, grad, state, lr, hyper);
}

AdamW::AdamW(ParameterStore& params, AdamHyper hyper)
    : params_(&params), hyper_(hyper), states_(params.size()) {}

void AdamW::step(double lr) {
  ++steps_;
  auto& entries = params_->entries();
  std::vector<double> zeros;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = entries[k].second;
    if (p.has_grad()) {
      adamw_step(p, p.grad_data(), states_[k], lr, hyper_);
    } else {
      zeros.assign(static_cast<std::size_t>(p.numel()), 0.0);
      adamw_step(p, zeros, states_[k], lr, hyper_);
    }
  }
}

void AdamW::reset() {
  states_.assign(params_->size(), OptimizerState{});
  steps_ = 0;
}

}  // namespace mseg
