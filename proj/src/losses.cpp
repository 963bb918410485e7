#include "mseg/losses.hpp"

#include <cmath>
#include <limits>

#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

namespace {

void check_logits_target(const Tensor& logits, const LabelMap& target) {
  MSEG_CHECK(logits.ndim() == 4, "expected logits [B,K,H,W], got " + shape_str(logits.shape()));
  MSEG_CHECK(target.shape.size() == 3 && target.shape[0] == logits.dim(0) && target.shape[1] == logits.dim(2) &&
                 target.shape[2] == logits.dim(3),
             "target " + shape_str(target.shape) + " does not match logits " + shape_str(logits.shape()));
  const auto K = logits.dim(1);
  for (auto y : target.labels) {
    if (y < 0 || y >= K) throw ValidationError("target class " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
  }
}

// [B,K,H,W] tensor holding scale[y] at the target class, zero elsewhere.
Tensor weighted_one_hot(const LabelMap& target, std::int64_t K, const std::vector<double>& scale, DType dtype) {
  const auto B = target.batch(), HW = target.height() * target.width();
  std::vector<double> d(static_cast<std::size_t>(B * K * HW), 0.0);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < HW; ++p) {
      const auto y = target.labels[static_cast<std::size_t>(b * HW + p)];
      d[static_cast<std::size_t>((b * K + y) * HW + p)] = scale[static_cast<std::size_t>(y)];
    }
  }
  return Tensor::from_data({B, K, target.height(), target.width()}, std::move(d), dtype);
}

}  // namespace

LabelMap make_label_map(Shape shape, std::vector<std::int32_t> labels) {
  MSEG_CHECK(shape.size() == 3, "label map shape must be [B,H,W]");
  MSEG_CHECK(numel(shape) == static_cast<std::int64_t>(labels.size()), "label map size mismatch");
  return LabelMap{std::move(shape), std::move(labels)};
}

LabelMap argmax_classes(const Tensor& logits) {
  MSEG_CHECK(logits.ndim() == 4, "expected logits [B,K,H,W]");
  const auto B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  const auto d = logits.data();
  LabelMap out{{B, logits.dim(2), logits.dim(3)}, std::vector<std::int32_t>(static_cast<std::size_t>(B * HW))};
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < HW; ++p) {
      std::int32_t best = 0;
      double bv = d[static_cast<std::size_t>(b * K * HW + p)];
      for (std::int64_t k = 1; k < K; ++k) {
        const double v = d[static_cast<std::size_t>((b * K + k) * HW + p)];
        if (v > bv) {
          bv = v;
          best = static_cast<std::int32_t>(k);
        }
      }
      out.labels[static_cast<std::size_t>(b * HW + p)] = best;
    }
  }
  return out;
}

std::vector<std::int64_t> label_histogram(std::span<const std::int32_t> labels, int num_classes) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(num_classes), 0);
  for (auto y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("label " + std::to_string(y) + " out of range");
    ++h[static_cast<std::size_t>(y)];
  }
  return h;
}

ClassWeights class_weights(std::span<const std::int64_t> hist) {
  std::int64_t total = 0, present = 0;
  for (auto c : hist) {
    if (c < 0) throw ValidationError("negative class count");
    total += c;
    present += c > 0;
  }
  if (total == 0) throw ValidationError("class histogram is all zero");
  ClassWeights w(hist.size(), 1.0);
  for (std::size_t c = 0; c < hist.size(); ++c) {
    if (hist[c] > 0) w[c] = static_cast<double>(total) / (static_cast<double>(present) * static_cast<double>(hist[c]));
  }
  return w;
}

Tensor balanced_cross_entropy(const Tensor& logits, const LabelMap& target, const ClassWeights& w) {
  check_logits_target(logits, target);
  const auto K = logits.dim(1);
  MSEG_CHECK(static_cast<std::int64_t>(w.size()) == K, "class weights need one entry per class");
  const auto pixels = static_cast<double>(target.labels.size());
  std::vector<double> scale(w.size());
  for (std::size_t c = 0; c < w.size(); ++c) scale[c] = -w[c] / pixels;
  const auto logp = log_softmax(logits, 1);
  return sum(mul(logp, weighted_one_hot(target, K, scale, logits.dtype())));
}

Tensor dice_loss(const Tensor& logits, const LabelMap& target, double eps) {
  check_logits_target(logits, target);
  const auto K = logits.dim(1);
  const auto p = softmax(logits, 1);
  const auto g = weighted_one_hot(target, K, std::vector<double>(static_cast<std::size_t>(K), 1.0), logits.dtype());
  const auto inter = sum_axes(mul(p, g), {0, 2, 3});
  const auto psum = sum_axes(p, {0, 2, 3});
  const auto gsum = sum_axes(g, {0, 2, 3});
  const auto num = add_scalar(scale(inter, 2.0), eps);
  const auto den = add_scalar(add(psum, gsum), eps);
  return add_scalar(scale(mean(div(num, den)), -1.0), 1.0);
}

Tensor combine_losses(const Tensor& bce, const Tensor& dice) {
  return add(scale(bce, kBceWeight), scale(dice, kDiceWeight));
}

LossTerms combined_loss_terms(const Tensor& logits, const LabelMap& target, const ClassWeights& w) {
  LossTerms t;
  t.bce = balanced_cross_entropy(logits, target, w);
  t.dice = dice_loss(logits, target);
  t.total = combine_losses(t.bce, t.dice);
  return t;
}

Tensor combined_loss(const Tensor& logits, const LabelMap& target, const ClassWeights& w) {
  return combined_loss_terms(logits, target, w).total;
}

IoUAccumulator::IoUAccumulator(int num_classes)
    : k_(num_classes), inter_(static_cast<std::size_t>(num_classes), 0), uni_(static_cast<std::size_t>(num_classes), 0) {
  MSEG_CHECK(num_classes >= 1, "iou needs at least one class");
}

void IoUAccumulator::add(std::span<const std::int32_t> pred, std::span<const std::int32_t> target) {
  MSEG_CHECK(pred.size() == target.size(), "iou: prediction and target sizes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred[i], t = target[i];
    if (p < 0 || p >= k_ || t < 0 || t >= k_) throw ValidationError("iou: class value outside [0,K)");
    if (p == t) {
      ++inter_[static_cast<std::size_t>(p)];
      ++uni_[static_cast<std::size_t>(p)];
    } else {
      ++uni_[static_cast<std::size_t>(p)];
      ++uni_[static_cast<std::size_t>(t)];
    }
  }
}

IoUReport IoUAccumulator::report() const {
  IoUReport r;
  double total = 0;
  for (int c = 0; c < k_; ++c) {
    const auto u = uni_[static_cast<std::size_t>(c)];
    if (u == 0) {
      r.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double v = static_cast<double>(inter_[static_cast<std::size_t>(c)]) / static_cast<double>(u);
    r.per_class.emplace_back(v);
    total += v;
    ++r.defined;
  }
  r.mean = r.defined > 0 ? total / r.defined : std::numeric_limits<double>::quiet_NaN();
  return r;
}

IoUReport iou(std::span<const std::int32_t> pred, std::span<const std::int32_t> target, int num_classes) {
  IoUAccumulator acc(num_classes);
  acc.add(pred, target);
  return acc.report();
}

double topk_accuracy(const Tensor& logits, std::span<const std::int32_t> labels, int k) {
  MSEG_CHECK(logits.ndim() == 2, "topk_accuracy expects logits [N,K]");
  const auto N = logits.dim(0), K = logits.dim(1);
  if (k < 1 || k > K) throw ValidationError("top-k needs 1 <= k <= K, got k=" + std::to_string(k));
  MSEG_CHECK(static_cast<std::int64_t>(labels.size()) == N, "topk_accuracy: one label per row");
  MSEG_CHECK(N > 0, "topk_accuracy: no rows");
  const auto d = logits.data();
  std::int64_t hits = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    const auto y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) throw ValidationError("label outside [0,K)");
    const double ly = d[static_cast<std::size_t>(n * K + y)];
    std::int64_t ahead = 0;
    for (std::int64_t j = 0; j < K; ++j) {
      const double lj = d[static_cast<std::size_t>(n * K + j)];
      if (lj > ly || (lj == ly && j < y)) ++ahead;
    }
    hits += ahead < k;
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

}  // namespace mseg
