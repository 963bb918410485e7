#include "mseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

using nlohmann::json;

PretrainSchedule PretrainSchedule::fine_tune() {
  PretrainSchedule s;
  s.base_lr = 1e-5;
  s.weight_decay = 1e-8;
  return s;
}

void PretrainSchedule::validate() const {
  if (epochs < 1) throw ValidationError("pretrain: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ValidationError("pretrain: need 0 <= warmup_epochs < epochs");
  if (batch < 1) throw ValidationError("pretrain: batch must be >= 1");
  if (!(base_lr >= 0) || !(min_lr >= 0) || min_lr > base_lr) throw ValidationError("pretrain: need 0 <= min_lr <= base_lr");
  if (!(weight_decay >= 0)) throw ValidationError("pretrain: weight_decay must be >= 0");
  if (patience < 1) throw ValidationError("pretrain: patience must be >= 1");
}

void SegSchedule::validate() const {
  if (!(phase1_lr >= 0) || !(phase2_lr >= 0)) throw ValidationError("finetune: learning rates must be >= 0");
  if (phase2_lr > phase1_lr) throw ValidationError("finetune: phase2_lr must not exceed phase1_lr");
  if (patience < 1) throw ValidationError("finetune: patience must be >= 1");
  if (batch < 1) throw ValidationError("finetune: batch must be >= 1");
  if (max_epochs_per_phase < 1) throw ValidationError("finetune: max_epochs_per_phase must be >= 1");
  if (!(min_delta >= 0)) throw ValidationError("finetune: min_delta must be >= 0");
}

double cosine_warmup_lr(int epoch, const PretrainSchedule& s) {
  if (epoch < 0 || epoch >= s.epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.epochs) + ")");
  }
  if (epoch < s.warmup_epochs) return s.base_lr * (epoch + 1) / s.warmup_epochs;
  const double t = static_cast<double>(epoch - s.warmup_epochs) / (s.epochs - s.warmup_epochs);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

bool early_stop(const std::vector<double>& history, int patience, double min_delta) {
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (history.size() <= static_cast<std::size_t>(patience)) return false;
  const auto split = history.end() - patience;
  const double best = *std::max_element(history.begin(), split);
  return std::none_of(split, history.end(), [&](double v) { return v > best + min_delta; });
}

// ---------------------------------------------------------------------------

std::string run_record_json(const RunRecord& r) {
  json j;
  j["kind"] = r.kind;
  j["seed"] = r.seed;
  j["best_epoch"] = r.best_epoch;
  j["best_metric"] = r.best_metric;
  j["epochs_to_converge"] = r.epochs_to_converge;
  j["best_checkpoint"] = r.best_checkpoint;
  j["initial_val_metric"] = r.initial_val_metric ? json(*r.initial_val_metric) : json(nullptr);
  j["notes"] = r.notes;
  j["epochs"] = json::array();
  for (const auto& e : r.epochs) {
    json row{{"epoch", e.epoch}, {"phase", e.phase}, {"lr", e.lr}, {"train_loss", e.train_loss},
             {"val_metric", e.val_metric}};
    if (e.val_top5 >= 0) row["val_top5"] = e.val_top5;
    j["epochs"].push_back(row);
  }
  j["config"] = r.config_json.empty() ? json(nullptr) : json::parse(r.config_json);
  return j.dump(2) + "\n";
}

std::string run_record_metrics(const RunRecord& r) {
  std::ostringstream out;
  out.precision(10);
  for (const auto& e : r.epochs) {
    out << "epoch=" << e.epoch << " phase=" << e.phase << " lr=" << e.lr << " train_loss=" << e.train_loss
        << " val_metric=" << e.val_metric;
    if (e.val_top5 >= 0) out << " val_top5=" << e.val_top5;
    out << '\n';
  }
  out << "best_epoch=" << r.best_epoch << " best_metric=" << r.best_metric
      << " epochs_to_converge=" << r.epochs_to_converge << '\n';
  return out.str();
}

void write_run_record(const RunRecord& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << s;
  };
  write(dir / "run.json", run_record_json(r));
  write(dir / "metrics.txt", run_record_metrics(r));
}

// ---------------------------------------------------------------------------

namespace {

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " detected");
}

void restore(Model& model, const Checkpoint& ck) { load_pretrained(model, ck, LoadPolicy::full); }

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with explicit draws so the order is identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

LoadReport apply_init(Model& model, const TrainOptions& options, RunRecord& record) {
  LoadReport report;
  if (!options.init) return report;
  report = load_pretrained(model, options.init->checkpoint, options.init->policy);
  record.notes.push_back("init: loaded " + std::to_string(report.loaded.size()) + ", skipped " +
                         std::to_string(report.skipped.size()) + ", mismatched " +
                         std::to_string(report.mismatched.size()));
  if (report.loaded.empty()) {
    throw ValidationError("init checkpoint is incompatible with the model: no tensor could be loaded (" +
                          std::to_string(report.mismatched.size()) + " shape mismatches)");
  }
  return report;
}

void save_best(const Checkpoint& ck, const TrainOptions& options) {
  if (options.out_dir.empty()) return;
  std::filesystem::create_directories(options.out_dir);
  save_checkpoint(ck, options.out_dir / "best.mseg");
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  MSEG_CHECK(logits.ndim() == 2, "cross_entropy expects logits [N,K]");
  const auto N = logits.dim(0), K = logits.dim(1);
  MSEG_CHECK(static_cast<std::int64_t>(labels.size()) == N, "cross_entropy: one label per row");
  std::vector<double> sel(static_cast<std::size_t>(N * K), 0.0);
  for (std::int64_t n = 0; n < N; ++n) {
    const auto y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) throw ValidationError("label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    sel[static_cast<std::size_t>(n * K + y)] = -1.0 / static_cast<double>(N);
  }
  return sum(mul(log_softmax(logits, 1), Tensor::from_data({N, K}, std::move(sel), logits.dtype())));
}

TrainResult pretrain_classifier(const ModelConfig& config, const DatasetManifest& manifest,
                                const PretrainSchedule& sched, std::uint64_t seed, const TrainOptions& options) {
  sched.validate();
  if (config.variant != Variant::classifier) throw ValidationError("pretrain needs a classifier model config");
  const auto train = load_classification_split(manifest, Split::train);
  if (train.empty()) throw ValidationError("pretrain: the train split is empty");
  auto val = load_classification_split(manifest, Split::val);

  TrainResult result;
  RunRecord& rec = result.record;
  rec.kind = "pretrain";
  rec.seed = seed;
  rec.config_json = options.config_json;
  rec.best_checkpoint = "best.mseg";
  if (val.empty()) {
    val = train;
    rec.notes.push_back("val split empty: validating on the train split");
  }
  for (const auto& s : train) {
    if (s.label >= config.num_classes) throw ValidationError("label " + std::to_string(s.label) + " >= num_classes");
  }

  Model model(config, seed);
  apply_init(model, options, rec);
  AdamHyper hyper;
  hyper.weight_decay = sched.weight_decay;
  AdamW opt(model.parameters(), hyper);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<Tensor> val_images;
  std::vector<std::int32_t> val_labels;
  for (const auto& s : val) {
    val_images.push_back(normalize(s.image, options.normalize, config.dtype));
    val_labels.push_back(s.label);
  }
  const int k5 = std::min(5, config.num_classes);

  std::vector<double> history;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const double lr = cosine_warmup_lr(epoch, sched);
    const auto order = shuffled(train.size(), rng);
    double loss_sum = 0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(sched.batch));
      std::vector<Tensor> imgs;
      std::vector<std::int32_t> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train[order[i]];
        auto aug = augment(s.image, std::nullopt, options.augment, rng).first;
        if (aug.width != config.input_size || aug.height != config.input_size) {
          throw ValidationError("training image size does not match the model input size");
        }
        imgs.push_back(normalize(aug, options.normalize, config.dtype));
        labels.push_back(s.label);
      }
      opt.zero_grad();
      ForwardContext ctx{true, &rng};
      const auto loss = cross_entropy(model.forward_classification(stack_images(imgs), ctx), labels);
      check_finite(loss.item(), "training loss");
      backward(loss);
      opt.step(lr);
      loss_sum += loss.item();
      ++steps;
    }
    opt.zero_grad();

    // Validation: top-1 drives model selection, top-5 is reported.
    std::vector<double> logits;
    {
      NoGradGuard ng;
      ForwardContext ctx;
      for (const auto& im : val_images) {
        const auto l = model.forward_classification(reshape(im, {1, 3, im.dim(1), im.dim(2)}), ctx);
        logits.insert(logits.end(), l.data().begin(), l.data().end());
      }
    }
    const auto lt = Tensor::from_data({static_cast<std::int64_t>(val_images.size()), config.num_classes}, logits, DType::f64);
    EpochRecord e;
    e.epoch = epoch;
    e.phase = 1;
    e.lr = lr;
    e.train_loss = loss_sum / steps;
    e.val_metric = topk_accuracy(lt, val_labels, 1);
    e.val_top5 = topk_accuracy(lt, val_labels, k5);
    check_finite(e.train_loss, "training loss");
    rec.epochs.push_back(e);
    if (options.on_epoch) options.on_epoch(e);
    history.push_back(e.val_metric);
    if (rec.best_epoch < 0 || e.val_metric > rec.best_metric) {
      rec.best_epoch = epoch;
      rec.best_metric = e.val_metric;
      result.best = checkpoint_from(model.parameters());
    }
    if (early_stop(history, sched.patience)) {
      rec.notes.push_back("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  rec.epochs_to_converge = rec.best_epoch + 1;
  save_best(result.best, options);
  return result;
}

// ---------------------------------------------------------------------------

SegmentationTrainer::SegmentationTrainer(Model& model, ClassWeights weights)
    : model_(&model), weights_(std::move(weights)), adam_(model.parameters(), AdamHyper{}) {}

double SegmentationTrainer::step(const Tensor& images, const LabelMap& target, double lr, Rng& rng) {
  adam_.zero_grad();
  ForwardContext ctx{true, &rng};
  const auto loss = combined_loss(model_->forward(images, ctx), target, weights_);
  const double value = loss.item();
  check_finite(value, "training loss");
  backward(loss);
  adam_.step(lr);
  adam_.zero_grad();
  return value;
}

void SegmentationTrainer::reset_optimizer() { adam_.reset(); }

TrainResult finetune_segmentation(const ModelConfig& config, const DatasetManifest& manifest,
                                  const SegSchedule& sched, std::uint64_t seed, const TrainOptions& options) {
  sched.validate();
  if (config.variant == Variant::classifier) throw ValidationError("finetune needs a segmentation model config");
  const auto train = load_segmentation_split(manifest, Split::train);
  if (train.empty()) throw ValidationError("finetune: the train split is empty");
  auto val = load_segmentation_split(manifest, Split::val);

  TrainResult result;
  RunRecord& rec = result.record;
  rec.kind = "finetune";
  rec.seed = seed;
  rec.config_json = options.config_json;
  rec.best_checkpoint = "best.mseg";
  if (val.empty()) {
    val = train;
    rec.notes.push_back("val split empty: validating on the train split");
  }

  std::vector<std::int32_t> all_labels;
  for (const auto& s : train) {
    if (s.image.width != config.input_size || s.image.height != config.input_size) {
      throw ValidationError("training image size does not match the model input size");
    }
    const auto l = mask_labels(s.mask, config.num_classes);
    all_labels.insert(all_labels.end(), l.begin(), l.end());
  }
  const auto weights = class_weights(label_histogram(all_labels, config.num_classes));

  Model model(config, seed);
  apply_init(model, options, rec);
  SegmentationTrainer trainer(model, weights);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

  auto validate_now = [&] { return evaluate(model, val, config.num_classes, options.normalize).mean; };
  rec.initial_val_metric = validate_now();
  result.best = checkpoint_from(model.parameters());

  int epoch = 0;
  for (int phase = 1; phase <= 2; ++phase) {
    const double lr = phase == 1 ? sched.phase1_lr : sched.phase2_lr;
    if (phase == 2) {
      restore(model, result.best);
      trainer.reset_optimizer();
      rec.notes.push_back("phase 2: restored best epoch " + std::to_string(rec.best_epoch) + ", lr " +
                          std::to_string(sched.phase1_lr) + " -> " + std::to_string(sched.phase2_lr));
    }
    std::vector<double> history;
    if (phase == 2 && rec.best_epoch >= 0) history.push_back(rec.best_metric);
    for (int e = 0; e < sched.max_epochs_per_phase; ++e, ++epoch) {
      const auto order = shuffled(train.size(), rng);
      double loss_sum = 0;
      int steps = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch)) {
        const auto end = std::min(order.size(), start + static_cast<std::size_t>(sched.batch));
        std::vector<Tensor> imgs;
        std::vector<std::int32_t> labels;
        std::int64_t h = 0, w = 0;
        for (std::size_t i = start; i < end; ++i) {
          const auto& s = train[order[i]];
          auto [im, mask] = augment(s.image, s.mask, options.augment, rng);
          h = mask->height;
          w = mask->width;
          if (h != config.input_size || w != config.input_size) {
            throw ValidationError("augmented sample does not match the model input size");
          }
          imgs.push_back(normalize(im, options.normalize, config.dtype));
          const auto l = mask_labels(*mask, config.num_classes);
          labels.insert(labels.end(), l.begin(), l.end());
        }
        const auto target = make_label_map({static_cast<std::int64_t>(imgs.size()), h, w}, std::move(labels));
        loss_sum += trainer.step(stack_images(imgs), target, lr, rng);
        ++steps;
      }
      EpochRecord er;
      er.epoch = epoch;
      er.phase = phase;
      er.lr = lr;
      er.train_loss = loss_sum / steps;
      er.val_metric = validate_now();
      check_finite(er.val_metric, "validation IoU");
      rec.epochs.push_back(er);
      if (options.on_epoch) options.on_epoch(er);
      history.push_back(er.val_metric);
      if (rec.best_epoch < 0 || er.val_metric > rec.best_metric) {
        rec.best_epoch = epoch;
        rec.best_metric = er.val_metric;
        result.best = checkpoint_from(model.parameters());
      }
      if (early_stop(history, sched.patience, sched.min_delta)) {
        rec.notes.push_back("phase " + std::to_string(phase) + ": early stop after epoch " + std::to_string(epoch));
        ++epoch;
        break;
      }
    }
  }
  rec.epochs_to_converge = rec.best_epoch + 1;
  save_best(result.best, options);
  return result;
}

// ---------------------------------------------------------------------------

StitchPlan plan_stitch(int height, int width, int tile) {
  StitchPlan plan;
  const auto ys = tile_offsets(height, tile, TilePolicy::cover);
  const auto xs = tile_offsets(width, tile, TilePolicy::cover);
  for (int y : ys) {
    for (int x : xs) plan.origins.emplace_back(y, x);
  }
  plan.owner.assign(static_cast<std::size_t>(height) * width, -1);
  std::vector<int> score(plan.owner.size(), -1);
  for (std::size_t t = 0; t < plan.origins.size(); ++t) {
    const auto [oy, ox] = plan.origins[t];
    for (int y = 0; y < tile; ++y) {
      for (int x = 0; x < tile; ++x) {
        // Distance to the nearest tile border; larger is more central.
        const int s = std::min(std::min(y, tile - 1 - y), std::min(x, tile - 1 - x));
        const auto p = static_cast<std::size_t>(oy + y) * width + (ox + x);
        if (s > score[p]) {
          score[p] = s;
          plan.owner[p] = static_cast<int>(t);
        }
      }
    }
  }
  return plan;
}

LabelMap predict_labels(const Model& model, const Image& image, const NormalizeSpec& norm) {
  const auto& c = model.config();
  if (c.variant == Variant::classifier) throw ValidationError("predict needs a segmentation model");
  const int S = static_cast<int>(c.input_size);
  NoGradGuard ng;
  ForwardContext ctx;
  auto run = [&](const Image& im) {
    const auto t = normalize(im, norm, c.dtype);
    return argmax_classes(model.forward(reshape(t, {1, 3, S, S}), ctx));
  };
  if (image.width == S && image.height == S) return run(image);
  if (image.width < S || image.height < S) {
    throw ValidationError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " is smaller than the model input " + std::to_string(S));
  }
  const auto plan = plan_stitch(image.height, image.width, S);
  LabelMap out{{1, image.height, image.width}, std::vector<std::int32_t>(static_cast<std::size_t>(image.height) * image.width)};
  for (std::size_t t = 0; t < plan.origins.size(); ++t) {
    const auto [oy, ox] = plan.origins[t];
    const auto pred = run(crop(image, oy, ox, S, S));
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const auto p = static_cast<std::size_t>(oy + y) * image.width + (ox + x);
        if (plan.owner[p] == static_cast<int>(t)) out.labels[p] = pred.labels[static_cast<std::size_t>(y) * S + x];
      }
    }
  }
  return out;
}

Image label_image(const LabelMap& labels) {
  MSEG_CHECK(labels.batch() == 1, "label_image expects a single map");
  Image im(static_cast<int>(labels.width()), static_cast<int>(labels.height()), 1);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const auto v = labels.labels[i];
    MSEG_CHECK(v >= 0 && v < 256, "class index does not fit in 8 bits");
    im.pixels[i] = static_cast<std::uint8_t>(v);
  }
  return im;
}

void predict(const Model& model, const std::filesystem::path& image_path, const std::filesystem::path& out_path,
             const NormalizeSpec& norm) {
  write_image(label_image(predict_labels(model, read_image(image_path), norm)), out_path);
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("cannot aggregate an empty list");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

EvalReport evaluate_predictions(const std::vector<LabelMap>& predictions, const std::vector<SegSample>& samples,
                                int num_classes) {
  if (samples.empty()) throw ValidationError("evaluate: the split is empty");
  MSEG_CHECK(predictions.size() == samples.size(), "one prediction per sample");
  EvalReport r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto truth = mask_labels(samples[i].mask, num_classes);
    auto rep = iou(predictions[i].labels, truth, num_classes);
    r.image_mean_iou.push_back(rep.mean);
    r.per_image.push_back(std::move(rep));
  }
  std::tie(r.mean, r.std) = mean_and_std(r.image_mean_iou);
  return r;
}

EvalReport evaluate(const Model& model, const std::vector<SegSample>& samples, int num_classes,
                    const NormalizeSpec& norm) {
  if (samples.empty()) throw ValidationError("evaluate: the split is empty");
  std::vector<LabelMap> preds;
  for (const auto& s : samples) preds.push_back(predict_labels(model, s.image, norm));
  return evaluate_predictions(preds, samples, num_classes);
}

std::string eval_report_json(const EvalReport& r) {
  json j;
  j["mean_iou"] = r.mean;
  j["std_iou"] = r.std;
  j["std_kind"] = "population";
  j["images"] = json::array();
  for (std::size_t i = 0; i < r.per_image.size(); ++i) {
    json per = json::array();
    for (const auto& c : r.per_image[i].per_class) per.push_back(c ? json(*c) : json(nullptr));
    j["images"].push_back({{"mean_iou", r.image_mean_iou[i]}, {"per_class", per}});
  }
  return j.dump(2) + "\n";
}

}  // namespace mseg
