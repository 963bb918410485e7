#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mseg/autograd.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Adam moments for one parameter.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW update with bias-corrected moments and decoupled decay:
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
void adamw_step(Tensor& param, std::span<const double> grad, OptimizerState& state, double lr,
                const AdamHyper& hyper);

/// adamw_step with weight decay forced to zero.
void adam_step(Tensor& param, std::span<const double> grad, OptimizerState& state, double lr,
               AdamHyper hyper);

/// AdamW over every tensor of a parameter store. Parameters with no
/// accumulated gradient are treated as having a zero gradient.
class AdamW {
 public:
  AdamW(ParameterStore& params, AdamHyper hyper);

  void step(double lr);
  void zero_grad() { params_->zero_grad(); }
  void reset();
  std::int64_t steps() const { return steps_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  ParameterStore* params_;
  AdamHyper hyper_;
  std::vector<OptimizerState> states_;
  std::int64_t steps_ = 0;
};

}  // namespace mseg
