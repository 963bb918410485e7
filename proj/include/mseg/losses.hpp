#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

/// Dense class-index map, row-major over [B, H, W].
struct LabelMap {
  Shape shape;  // {B, H, W}
  std::vector<std::int32_t> labels;

  std::int64_t batch() const { return shape.at(0); }
  std::int64_t height() const { return shape.at(1); }
  std::int64_t width() const { return shape.at(2); }
};

LabelMap make_label_map(Shape shape, std::vector<std::int32_t> labels);

/// Per-class argmax of logits [B,K,H,W]; ties go to the lower class index.
LabelMap argmax_classes(const Tensor& logits);

using ClassWeights = std::vector<double>;

/// Per-class pixel counts of `labels` (values must be in [0, K)).
std::vector<std::int64_t> label_histogram(std::span<const std::int32_t> labels, int num_classes);

/// w_c = total / (K_present · count_c) for present classes, 1 for absent ones.
ClassWeights class_weights(std::span<const std::int64_t> hist);

/// Mean over pixels of w[y] · (−log softmax(logits)[y]).
Tensor balanced_cross_entropy(const Tensor& logits, const LabelMap& target, const ClassWeights& w);

/// 1 − mean_c (2·Σ p_c g_c + eps) / (Σ p_c + Σ g_c + eps) over the whole batch.
Tensor dice_loss(const Tensor& logits, const LabelMap& target, double eps = 1.0);

inline constexpr double kBceWeight = 0.7;
inline constexpr double kDiceWeight = 0.3;

struct LossTerms {
  Tensor total;
  Tensor bce;
  Tensor dice;
};

/// kBceWeight·BCE + kDiceWeight·Dice.
Tensor combine_losses(const Tensor& bce, const Tensor& dice);
LossTerms combined_loss_terms(const Tensor& logits, const LabelMap& target, const ClassWeights& w);
Tensor combined_loss(const Tensor& logits, const LabelMap& target, const ClassWeights& w);

struct IoUReport {
  std::vector<std::optional<double>> per_class;  // empty when the union is empty
  double mean = 0.0;                             // over defined classes; NaN if none
  int defined = 0;
};

/// Running intersection/union counts.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(int num_classes);
  void add(std::span<const std::int32_t> pred, std::span<const std::int32_t> target);
  IoUReport report() const;

 private:
  int k_;
  std::vector<std::int64_t> inter_, uni_;
};

IoUReport iou(std::span<const std::int32_t> pred, std::span<const std::int32_t> target, int num_classes);

/// Fraction of rows whose label ranks among the k largest logits. A class
/// ranks ahead of the label if its logit is larger, or equal with a lower
/// index.
double topk_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, int k);

}  // namespace mseg
