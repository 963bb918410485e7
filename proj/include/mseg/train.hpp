#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mseg/checkpoint.hpp"
#include "mseg/data.hpp"
#include "mseg/losses.hpp"
#include "mseg/manifest.hpp"
#include "mseg/model.hpp"
#include "mseg/optim.hpp"

namespace mseg {

struct PretrainSchedule {
  int epochs = 30;
  int warmup_epochs = 5;
  int batch = 128;
  double base_lr = 1e-3;
  double min_lr = 0.0;
  double weight_decay = 0.05;
  int patience = 5;

  /// Overrides used when fine-tuning a pre-trained classifier.
  static PretrainSchedule fine_tune();
  /// Rates may be zero (which freezes the parameters) but not negative.
  void validate() const;
};

struct SegSchedule {
  double phase1_lr = 2e-4;
  double phase2_lr = 1e-5;
  int patience = 30;
  int batch = 2;
  int max_epochs_per_phase = 300;
  double min_delta = 0.0;

  void validate() const;
};

/// Linear warmup from base/warmup, then cosine decay towards min_lr.
double cosine_warmup_lr(int epoch, const PretrainSchedule& sched);

/// True iff the last `patience` entries hold no strict improvement (by more
/// than min_delta) over the best value recorded before them.
bool early_stop(const std::vector<double>& history, int patience, double min_delta = 0.0);

struct EpochRecord {
  int epoch = 0;
  int phase = 1;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  double val_top5 = -1.0;  // classification only

  bool operator==(const EpochRecord&) const = default;
};

struct RunRecord {
  std::string kind;  // "pretrain" or "finetune"
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_metric = 0.0;
  int epochs_to_converge = 0;
  std::string best_checkpoint;  // relative to the run directory
  std::uint64_t seed = 0;
  std::string config_json;      // snapshot of the full configuration
  std::optional<double> initial_val_metric;
  std::vector<std::string> notes;  // load reports, phase transitions, fallbacks

  bool operator==(const RunRecord&) const = default;
};

std::string run_record_json(const RunRecord& record);
/// One line per epoch: "epoch=3 phase=1 lr=... train_loss=... val_metric=...".
std::string run_record_metrics(const RunRecord& record);
void write_run_record(const RunRecord& record, const std::filesystem::path& dir);

struct TrainResult {
  RunRecord record;
  Checkpoint best;
};

struct InitSpec {
  Checkpoint checkpoint;
  LoadPolicy policy = LoadPolicy::encoder_only;
};

struct TrainOptions {
  std::optional<InitSpec> init;
  AugmentSpec augment = AugmentSpec::none();
  NormalizeSpec normalize;
  /// Where best.mseg is written; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::string config_json;
  /// Called after each epoch (progress output).
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Cross entropy averaged over rows of logits [N,K].
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

TrainResult pretrain_classifier(const ModelConfig& config, const DatasetManifest& manifest,
                                const PretrainSchedule& sched, std::uint64_t seed, const TrainOptions& options = {});

/// One optimizer step at a time on the combined segmentation loss.
class SegmentationTrainer {
 public:
  SegmentationTrainer(Model& model, ClassWeights weights);
  /// Returns the loss before the update; throws NumericError on NaN/inf.
  double step(const Tensor& images, const LabelMap& target, double lr, Rng& rng);
  void reset_optimizer();

 private:
  Model* model_;
  ClassWeights weights_;
  AdamW adam_;
};

TrainResult finetune_segmentation(const ModelConfig& config, const DatasetManifest& manifest,
                                  const SegSchedule& sched, std::uint64_t seed, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Inference and evaluation

/// Class map [H,W] for one image. Images larger than the model input are
/// tiled with the cover policy and stitched so each pixel takes the value
/// from the tile where it lies farthest from the tile border.
LabelMap predict_labels(const Model& model, const Image& image, const NormalizeSpec& norm = {});

/// Tile origins and the per-pixel owner used when stitching.
struct StitchPlan {
  std::vector<std::pair<int, int>> origins;  // (y, x)
  std::vector<int> owner;                    // [H·W], index into origins
};
StitchPlan plan_stitch(int height, int width, int tile);

Image label_image(const LabelMap& labels);

/// Reads `image_path`, predicts and writes the mask (8-bit PGM unless the
/// extension is .png).
void predict(const Model& model, const std::filesystem::path& image_path, const std::filesystem::path& out_path,
             const NormalizeSpec& norm = {});

struct EvalReport {
  std::vector<IoUReport> per_image;
  std::vector<double> image_mean_iou;
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Mean and population std of per-image values.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

EvalReport evaluate(const Model& model, const std::vector<SegSample>& samples, int num_classes,
                    const NormalizeSpec& norm = {});
EvalReport evaluate_predictions(const std::vector<LabelMap>& predictions, const std::vector<SegSample>& samples,
                                int num_classes);

std::string eval_report_json(const EvalReport& report);

}  // namespace mseg
