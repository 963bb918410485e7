#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

struct ModelConfig;

/// Central differences (f(x + h·e_i) - f(x - h·e_i)) / 2h for every element
/// of x. f must return a one-element tensor.
Tensor finite_difference_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-4);

/// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// near-zero gradients from turning truncation noise into huge ratios.
double gradient_relative_error(double analytic, double numeric, double floor = 1e-3);

struct GradCheckResult {
  std::string name;
  std::int64_t checked = 0;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Compares backward() against Richardson-extrapolated central differences
/// (steps h and h/2) for `leaves`, which are perturbed in place and restored.
/// At most `samples_per_leaf` coordinates of each leaf are probed (all of
/// them when the leaf is smaller).
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                std::vector<Tensor> leaves, double h, std::int64_t samples_per_leaf,
                                Rng& rng);

/// Every differentiable primitive on randomized f64 shapes. `rounds` seeds
/// per primitive.
std::vector<GradCheckResult> run_op_gradient_suite(std::uint64_t seed, int rounds);

/// 16² CS-UNet in f64: patch 2, C=4, window 2, depths [2,2,2,2].
ModelConfig gradcheck_model_config();

/// Combined segmentation loss of a freshly built model on random data,
/// checked for every parameter tensor and the input image.
GradCheckResult check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                      std::int64_t samples_per_leaf = 3);

}  // namespace mseg
