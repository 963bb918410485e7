// Acceptance checks, one PASS/FAIL line per criterion. Arguments select a
// subset by number; no arguments runs all of them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "../support/synth.hpp"
#include "mseg/checkpoint.hpp"
#include "mseg/cluster.hpp"
#include "mseg/config.hpp"
#include "mseg/data.hpp"
#include "mseg/errors.hpp"
#include "mseg/gradcheck.hpp"
#include "mseg/losses.hpp"
#include "mseg/ops.hpp"
#include "mseg/parallel.hpp"
#include "mseg/swin.hpp"
#include "mseg/train.hpp"

#ifndef MSEG_TEST_DATA_DIR
#error "MSEG_TEST_DATA_DIR must point at tests/data"
#endif

using namespace mseg;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-5;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kAttentionTol = 1e-5;
constexpr double kCompositionTol = 1e-12;
constexpr double kLossOracleTol = 1e-6;
constexpr double kOverfitIoU = 0.95;
constexpr int kOverfitSteps = 300;
constexpr double kOverfitBudgetSeconds = 300.0;
constexpr int kTransferPairs = 5;
constexpr int kTransferPass = 4;
constexpr int kTransferWarn = 3;

enum class Status { pass, fail, warn };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
};

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mseg_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void zero(Tensor t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_suite() {
  Clock clock;
  double worst = 0;
  std::string worst_name;
  int checks = 0;
  auto take = [&](const GradCheckResult& r) {
    ++checks;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  };
  for (const auto& r : run_op_gradient_suite(1, 3)) take(r);
  for (auto v : {Variant::cs_unet, Variant::swin_unet, Variant::unet}) {
    auto c = gradcheck_model_config();
    c.variant = v;
    take(check_model_gradients(c, 2, 6));
  }
  const double secs = clock.seconds();
  const bool ok = worst < kGradTol && secs < kGradBudgetSeconds;
  return {ok ? Status::pass : Status::fail, std::to_string(checks) + " checks, max rel err " + fmt("%.2e", worst) +
                                                " (" + worst_name + "), " + fmt("%.1f", secs) + " s"};
}

// 2 -------------------------------------------------------------------------

Outcome swin_kernels() {
  Rng rng(21);
  bool roundtrip = true;
  for (int M : {2, 4, 8}) {
    for (std::int64_t side : {8, 16, 24}) {
      if (side % M) continue;
      const auto g = Tensor::randn({2, side, side, 5}, rng, DType::f64);
      const auto back = window_reverse(window_partition(g, M), M, side, side);
      const auto a = g.data(), b = back.data();
      roundtrip = roundtrip && back.shape() == g.shape() && std::equal(a.begin(), a.end(), b.begin());
    }
  }
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ParameterStore store;
    Rng r(seed);
    ParamFactory f(store, r, DType::f64);
    SwinStageConfig cfg;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.window = 4;
    cfg.depth = 2;
    auto blocks = make_swin_blocks(f.scope("s"), cfg, 8, 8);
    auto& b = blocks[1];
    if (b.shift != 2) return {Status::fail, "second block is not shifted by 2"};
    // Isolate the attention residual.
    zero(b.mlp.fc3.weight);
    zero(b.mlp.fc3.bias);
    // Random relative position bias so the bias path is exercised too.
    for (auto& v : b.attn.bias_table.mutable_data()) v = std::normal_distribution<double>(0.0, 0.5)(r);
    const auto x = Tensor::randn({1, 64, 8}, r, DType::f64);
    ForwardContext ctx;
    const auto y = swin_block(x, b, 8, 8, ctx);
    const auto expect = oracle::shifted_attention_block(x, b, 8, 8);
    for (std::size_t i = 0; i < expect.size(); ++i) worst = std::max(worst, std::abs(y.data()[i] - expect[i]));
  }
  const bool ok = roundtrip && worst < kAttentionTol;
  return {ok ? Status::pass : Status::fail, std::string("partition roundtrip ") + (roundtrip ? "exact" : "BROKEN") +
                                                " for M in {2,4,8}; shifted attention max abs err " + fmt("%.2e", worst)};
}

// 3 -------------------------------------------------------------------------

Outcome loss_composition() {
  Rng rng(33);
  double comp = 0, bce_err = 0, dice_err = 0;
  bool iou_exact = true, topk_exact = true;
  for (int t = 0; t < 100; ++t) {
    const std::int64_t B = 1 + static_cast<std::int64_t>(rng() % 2), K = 2 + static_cast<std::int64_t>(rng() % 3);
    const std::int64_t H = 4, W = 4;
    const auto logits = Tensor::randn({B, K, H, W}, rng, DType::f64, 2.0);
    std::vector<std::int32_t> y(static_cast<std::size_t>(B * H * W));
    for (auto& v : y) v = static_cast<std::int32_t>(rng() % K);
    const auto target = make_label_map({B, H, W}, y);
    ClassWeights w(static_cast<std::size_t>(K));
    for (auto& v : w) v = std::uniform_real_distribution<double>(0.2, 3.0)(rng);
    const double b = balanced_cross_entropy(logits, target, w).item();
    const double d = dice_loss(logits, target).item();
    const double total = combined_loss(logits, target, w).item();
    comp = std::max(comp, std::abs(total - (0.7 * b + 0.3 * d)));

    const std::vector<double> lv(logits.data().begin(), logits.data().end());
    const std::vector<int> yi(y.begin(), y.end());
    bce_err = std::max(bce_err, std::abs(b - oracle::bce(lv, yi, B, K, H * W, w)));
    dice_err = std::max(dice_err, std::abs(d - oracle::dice(lv, yi, B, K, H * W, 1.0)));

    std::vector<std::int32_t> pred(16), truth(16);
    for (auto& v : pred) v = static_cast<std::int32_t>(rng() % K);
    for (auto& v : truth) v = static_cast<std::int32_t>(rng() % K);
    const auto rep = iou(pred, truth, static_cast<int>(K));
    const auto ref = oracle::iou_per_class({pred.begin(), pred.end()}, {truth.begin(), truth.end()}, static_cast<int>(K));
    for (std::size_t c = 0; c < ref.size(); ++c) {
      const bool defined = ref[c] >= 0;
      iou_exact = iou_exact && rep.per_class[c].has_value() == defined && (!defined || *rep.per_class[c] == ref[c]);
    }

    // Integer-valued logits so ties occur.
    const std::int64_t N = 4, KC = 6;
    std::vector<double> cl(static_cast<std::size_t>(N * KC));
    for (auto& v : cl) v = static_cast<double>(rng() % 4);
    std::vector<std::int32_t> labels(static_cast<std::size_t>(N));
    for (auto& v : labels) v = static_cast<std::int32_t>(rng() % KC);
    const auto ct = Tensor::from_data({N, KC}, cl, DType::f64);
    for (int k = 1; k <= KC; ++k) {
      topk_exact = topk_exact && topk_accuracy(ct, labels, k) == oracle::topk(cl, {labels.begin(), labels.end()}, KC, k);
    }
  }
  const bool ok = comp < kCompositionTol && bce_err < kLossOracleTol && dice_err < kLossOracleTol && iou_exact &&
                  topk_exact;
  return {ok ? Status::pass : Status::fail,
          "composition err " + fmt("%.1e", comp) + ", BCE err " + fmt("%.1e", bce_err) + ", Dice err " +
              fmt("%.1e", dice_err) + ", IoU " + (iou_exact ? "exact" : "MISMATCH") + ", top-k " +
              (topk_exact ? "exact" : "MISMATCH")};
}

// 4 -------------------------------------------------------------------------

ModelConfig arch_config(std::int64_t size, std::vector<int> depths, Variant v) {
  ModelConfig c;
  c.variant = v;
  c.depths = std::move(depths);
  c.input_size = size;
  if (size == 224) {
    c.embed_dim = 12;
    c.heads = {3, 6, 12, 24};
    c.window = 7;
  } else {
    c.embed_dim = 8;
    c.heads = {1, 2, 4, 8};
    c.window = 4;
  }
  c.num_classes = v == Variant::classifier ? 74 : 3;
  return c;
}

Outcome architecture() {
  Clock clock;
  std::vector<std::string> problems;
  int built = 0, grad_checked = 0;
  for (std::int64_t size : {64, 224}) {
    for (const auto& depths : {std::vector<int>{2, 2, 6, 2}, std::vector<int>{2, 2, 2, 2}}) {
      for (auto v : {Variant::cs_unet, Variant::swin_unet, Variant::unet, Variant::classifier}) {
        const auto cfg = arch_config(size, depths, v);
        Model m(cfg, 5);
        ++built;
        Rng rng(9);
        const auto x = Tensor::randn({2, 3, size, size}, rng, cfg.dtype);
        ForwardContext ctx;
        const auto out = m.forward(x, ctx);
        const Shape expect = v == Variant::classifier ? Shape{2, 74} : Shape{2, 3, size, size};
        const std::string tag = std::string(variant_name(v)) + "@" + std::to_string(size) + " d" +
                                std::to_string(depths[2]);
        if (out.shape() != expect) {
          problems.push_back(tag + " wrong shape");
          continue;
        }
        // One backward pass; every parameter must receive some gradient.
        Tensor loss;
        if (v == Variant::classifier) {
          loss = cross_entropy(out, std::vector<std::int32_t>{3, 70});
        } else {
          std::vector<std::int32_t> y(static_cast<std::size_t>(2 * size * size));
          for (auto& l : y) l = static_cast<std::int32_t>(rng() % 3);
          loss = combined_loss(out, make_label_map({2, size, size}, y), {1.0, 1.0, 1.0});
        }
        const auto grads = backward(loss, m.parameters());
        ++grad_checked;
        for (const auto& [name, g] : grads) {
          const auto d = g.data();
          if (std::all_of(d.begin(), d.end(), [](double t) { return t == 0.0; })) {
            problems.push_back(tag + " zero grad " + name);
          }
        }
      }
    }
  }
  std::string detail = std::to_string(built) + " models built, " + std::to_string(grad_checked) +
                       " backward passes, " + fmt("%.1f", clock.seconds()) + " s";
  if (!problems.empty()) detail += "; first problem: " + problems.front();
  return {problems.empty() ? Status::pass : Status::fail, detail};
}

// 5 -------------------------------------------------------------------------

Outcome overfit() {
  Clock clock;
  std::string detail;
  int passed = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng data_rng(1000 + seed);
    const auto pair = synth::shapes(64, 3, data_rng);
    const auto cfg = ModelConfig::tiny();
    Model model(cfg, seed);
    const auto labels = mask_labels(pair.mask, cfg.num_classes);
    const auto target = make_label_map({1, 64, 64}, labels);
    const auto x = reshape(normalize(pair.image, {}, cfg.dtype), {1, 3, 64, 64});
    SegmentationTrainer trainer(model, class_weights(label_histogram(labels, cfg.num_classes)));
    Rng rng(seed);
    int reached = -1;
    double last = 0;
    for (int step = 1; step <= kOverfitSteps; ++step) {
      trainer.step(x, target, 1e-3, rng);
      if (step % 5 == 0) {
        NoGradGuard ng;
        ForwardContext ctx;
        last = iou(argmax_classes(model.forward(x, ctx)).labels, labels, cfg.num_classes).mean;
        if (last >= kOverfitIoU) {
          reached = step;
          break;
        }
      }
    }
    if (reached > 0) ++passed;
    detail += (detail.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + ": " +
              (reached > 0 ? "IoU " + fmt("%.3f", last) + " at step " + std::to_string(reached)
                           : "IoU " + fmt("%.3f", last) + " after " + std::to_string(kOverfitSteps));
  }
  const double secs = clock.seconds();
  const bool ok = passed == 3 && secs < kOverfitBudgetSeconds;
  return {ok ? Status::pass : Status::fail, detail + "; " + fmt("%.1f", secs) + " s"};
}

// 6 -------------------------------------------------------------------------

ModelConfig transfer_config() {
  auto c = ModelConfig::tiny();
  c.variant = Variant::classifier;
  c.num_classes = 8;
  return c;
}

Outcome transfer() {
  Clock clock;
  const auto dir = scratch("transfer");
  const auto cfg = transfer_config();
  const auto source = load_manifest(synth::write_texture_dataset(dir / "source", 64, 8, 16, 4, 100));
  PretrainSchedule source_sched;
  source_sched.epochs = 20;
  source_sched.warmup_epochs = 2;
  source_sched.batch = 16;
  source_sched.patience = 5;
  const auto pre = pretrain_classifier(cfg, source, source_sched, 7);
  // Both arms of each pair share this schedule.
  PretrainSchedule sched;
  sched.epochs = 12;
  sched.warmup_epochs = 2;
  sched.batch = 16;
  sched.patience = 4;

  int wins = 0;
  std::string detail = "source top-1 " + fmt("%.2f", pre.record.best_metric) + ";";
  for (int pair = 0; pair < kTransferPairs; ++pair) {
    const auto target =
        load_manifest(synth::write_texture_dataset(dir / ("target" + std::to_string(pair)), 64, 8, 3, 3, 200 + pair));
    const std::uint64_t seed = 50 + static_cast<std::uint64_t>(pair);
    TrainOptions init;
    init.init = InitSpec{pre.best, LoadPolicy::encoder_only};
    const auto warm = pretrain_classifier(cfg, target, sched, seed, init);
    const auto cold = pretrain_classifier(cfg, target, sched, seed);
    const bool win = warm.record.epochs_to_converge <= cold.record.epochs_to_converge;
    wins += win;
    detail += " " + std::to_string(warm.record.epochs_to_converge) + "/" +
              std::to_string(cold.record.epochs_to_converge) + "(" + fmt("%.2f", warm.record.best_metric) + " vs " +
              fmt("%.2f", cold.record.best_metric) + ")";
  }
  detail = std::to_string(wins) + "/" + std::to_string(kTransferPairs) +
           " pairs converge no later with pre-training; epochs pretrained/random " + detail + "; " +
           fmt("%.0f", clock.seconds()) + " s";
  if (wins >= kTransferPass) return {Status::pass, detail};
  if (wins >= kTransferWarn) return {Status::warn, detail};
  return {Status::fail, detail};
}

// 7 -------------------------------------------------------------------------

Outcome schedules() {
  bool ok = true;
  std::string detail;
  PretrainSchedule s;
  ok = ok && cosine_warmup_lr(s.warmup_epochs, s) == s.base_lr;
  for (int e = s.warmup_epochs + 1; e < s.epochs; ++e) ok = ok && cosine_warmup_lr(e, s) <= cosine_warmup_lr(e - 1, s);
  detail = "lr(warmup) == base " + std::string(ok ? "and non-increasing after" : "VIOLATED");

  const auto dir = scratch("schedule");
  const auto manifest = load_manifest(synth::write_seg_dataset(dir, 16, 3, 2, 2, 0, 4));
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.patch = 2;
  cfg.embed_dim = 4;
  cfg.depths = {1, 1, 1, 1};
  cfg.heads = {1, 1, 1, 1};
  cfg.window = 2;
  SegSchedule seg;
  seg.patience = 2;
  seg.max_epochs_per_phase = 4;
  const auto r = finetune_segmentation(cfg, manifest, seg, 1);
  int drops = 0;
  bool values = !r.record.epochs.empty() && r.record.epochs.front().lr == 2e-4 && r.record.epochs.back().lr == 1e-5;
  for (std::size_t i = 1; i < r.record.epochs.size(); ++i) {
    const auto a = r.record.epochs[i - 1].lr, b = r.record.epochs[i].lr;
    if (a != b) {
      ++drops;
      values = values && a == 2e-4 && b == 1e-5;
    }
  }
  ok = ok && drops == 1 && values;
  detail += "; segmentation trace " + std::to_string(r.record.epochs.size()) + " epochs, " + std::to_string(drops) +
            " drop(s) 2e-4 -> 1e-5";
  return {ok ? Status::pass : Status::fail, detail};
}

// 8 -------------------------------------------------------------------------

template <typename E>
bool throws_exactly(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome checkpoints() {
  const auto dir = scratch("checkpoint");
  ModelConfig cfg = ModelConfig::tiny();
  Model m(cfg, 3);
  save_checkpoint(checkpoint_from(m.parameters()), dir / "a.mseg");
  save_checkpoint(load_checkpoint(dir / "a.mseg"), dir / "b.mseg");
  const bool identical = read_bytes(dir / "a.mseg") == read_bytes(dir / "b.mseg");

  // Golden file: classifier, input 32, C=4, depths [1,1,1,1], window 2, K=3, seed 7.
  ModelConfig g;
  g.variant = Variant::classifier;
  g.input_size = 32;
  g.embed_dim = 4;
  g.depths = {1, 1, 1, 1};
  g.heads = {1, 1, 1, 1};
  g.window = 2;
  g.num_classes = 3;
  g.mlp_ratio = 2.0;
  const auto golden = load_checkpoint(fs::path(MSEG_TEST_DATA_DIR) / "golden_tiny.mseg");
  Model gm(g, 7);
  bool golden_ok = golden.tensors.size() == gm.parameters().size();
  for (std::size_t i = 0; golden_ok && i < golden.tensors.size(); ++i) {
    const auto& [name, t] = gm.parameters().entries()[i];
    golden_ok = golden.tensors[i].name == name && golden.tensors[i].tensor.shape() == t.shape();
  }
  golden_ok = golden_ok && golden.find("head.weight") && golden.find("head.weight")->shape() == Shape{3, 32};

  auto bytes = encode_checkpoint(checkpoint_from(m.parameters()));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  auto bad_version = bytes;
  bad_version[4] = 9;
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2));
  const bool distinct = throws_exactly<BadMagicError>(bad_magic) && throws_exactly<UnsupportedVersionError>(bad_version) &&
                        throws_exactly<TruncatedFileError>(truncated) &&
                        !throws_exactly<TruncatedFileError>(bad_magic) && !throws_exactly<BadMagicError>(truncated);
  const bool ok = identical && golden_ok && distinct;
  return {ok ? Status::pass : Status::fail,
          std::string("save-load-save ") + (identical ? "byte-identical" : "DIFFERS") + ", golden " +
              std::to_string(golden.tensors.size()) + " tensors " + (golden_ok ? "match" : "MISMATCH") +
              ", corruption errors " + (distinct ? "distinct" : "NOT distinct")};
}

// 9 -------------------------------------------------------------------------

Outcome pipeline() {
  bool cover = true;
  for (int size = 512; size <= 1500; size += 97) {
    std::vector<char> hit(static_cast<std::size_t>(size), 0);
    for (int o : tile_offsets(size, 512, TilePolicy::cover)) {
      cover = cover && o >= 0 && o + 512 <= size;
      for (int i = o; i < o + 512 && i < size; ++i) hit[static_cast<std::size_t>(i)] = 1;
    }
    cover = cover && std::all_of(hit.begin(), hit.end(), [](char c) { return c; });
  }
  const auto tiles = tile_image(Image(700, 700, 1), TilingSpec{512, TilePolicy::cover});
  std::set<std::pair<int, int>> origins;
  for (const auto& t : tiles) origins.insert({t.y, t.x});
  const bool case700 = tiles.size() == 4 && origins == std::set<std::pair<int, int>>{{0, 0}, {0, 188}, {188, 0}, {188, 188}};

  int ari_ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng g(seed + 500);
    std::normal_distribution<double> n(0.0, 0.5);
    std::vector<double> d;
    std::vector<int> truth;
    for (int i = 0; i < 90; ++i) {
      const int c = i % 3;
      truth.push_back(c);
      for (int k = 0; k < 4; ++k) d.push_back((k == c ? 25.0 : 0.0) + n(g));
    }
    const auto r = kmeans(Tensor::from_data({90, 4}, d, DType::f64), 3, seed);
    ari_ok += oracle::adjusted_rand_index(truth, r.assignments) == 1.0;
  }

  Image coord(24, 24, 3), mask_y(24, 24, 1), mask_x(24, 24, 1);
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 24; ++x) {
      coord.at(y, x, 0) = mask_y.at(y, x) = static_cast<std::uint8_t>(y);
      coord.at(y, x, 1) = mask_x.at(y, x) = static_cast<std::uint8_t>(x);
    }
  }
  AugmentSpec geo = AugmentSpec::none();
  geo.hflip_p = geo.vflip_p = geo.rot90_p = 0.5;
  geo.crop_size = 16;
  bool paired = true;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng a(s), b(s);
    const auto [im, my] = augment(coord, mask_y, geo, a);
    const auto [im2, mx] = augment(coord, mask_x, geo, b);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        paired = paired && im.at(y, x, 0) == my->at(y, x) && im.at(y, x, 1) == mx->at(y, x);
      }
    }
  }
  const bool ok = cover && case700 && ari_ok == 10 && paired;
  return {ok ? Status::pass : Status::fail,
          std::string("cover tiling ") + (cover ? "complete" : "INCOMPLETE") + " for 512..1500, 700/512 origins " +
              (case700 ? "{0,188}^2" : "WRONG") + ", k-means ARI 1.0 on " + std::to_string(ari_ok) +
              "/10 seeds, paired geometry " + (paired ? "identical" : "DIFFERS")};
}

// 10 ------------------------------------------------------------------------

Outcome determinism() {
#ifndef MSEG_CLI_PATH
  return {Status::fail, "the mseg tool was not built (MSEG_BUILD_TOOLS=OFF)"};
#else
  const auto dir = scratch("determinism");
  const auto cls = synth::write_texture_dataset(dir / "tex", 16, 4, 4, 2, 61);
  const auto seg = synth::write_seg_dataset(dir / "seg", 16, 3, 3, 2, 1, 62);
  const std::string model = R"("input_size": 16, "patch": 2, "embed_dim": 4, "depths": [1, 1, 1, 1],
                               "heads": [1, 1, 1, 1], "window": 2, "mlp_ratio": 2.0)";
  {
    std::ofstream(dir / "cls.json") << R"({"model": {"variant": "classifier", "num_classes": 4, )" << model
                                    << R"(}, "pretrain": {"epochs": 3, "warmup_epochs": 1, "batch": 4},
                                          "augment": {"noise_p": 0.5}})";
    std::ofstream(dir / "seg.json") << R"({"model": {"variant": "cs_unet", "num_classes": 3, )" << model
                                    << R"(}, "finetune": {"patience": 1, "max_epochs_per_phase": 2},
                                          "augment": {}})";
  }
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string("\"") + MSEG_CLI_PATH + "\" " + args + " > \"" + (dir / "log.txt").string() +
                            "\" 2>&1";
    return std::system(cmd.c_str());
  };
  for (const std::string r : {"a", "b"}) {
    const auto out = dir / r;
    const int c1 = run("--config " + (dir / "cls.json").string() + " --seed 11 --threads 1 --out " +
                       (out / "pre").string() + " pretrain --manifest " + cls.string());
    const int c2 = run("--config " + (dir / "seg.json").string() + " --seed 12 --threads 1 --out " +
                       (out / "seg").string() + " finetune --manifest " + seg.string() + " --init " +
                       (out / "pre" / "best.mseg").string());
    if (c1 != 0 || c2 != 0) return {Status::fail, "CLI run failed: " + read_bytes(dir / "log.txt")};
  }
  bool same = true;
  std::string detail;
  for (const std::string stage : {"pre", "seg"}) {
    for (const std::string f : {"run.json", "metrics.txt", "best.mseg"}) {
      const auto a = read_bytes(dir / "a" / stage / f), b = read_bytes(dir / "b" / stage / f);
      const bool eq = !a.empty() && a == b;
      same = same && eq;
      if (!eq) detail += " " + stage + "/" + f + " differs";
    }
  }
  return {same ? Status::pass : Status::fail,
          same ? "pretrain and finetune run twice: run.json, metrics.txt and best.mseg byte-identical" : detail};
#endif
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  set_num_threads(1);
  const std::vector<Criterion> all{
      {1, "gradient suite", gradient_suite},     {2, "swin kernel oracles", swin_kernels},
      {3, "loss composition", loss_composition}, {4, "architecture contracts", architecture},
      {5, "one-image overfit", overfit},         {6, "transfer effect (soft)", transfer},
      {7, "schedule values", schedules},         {8, "checkpoint", checkpoints},
      {9, "pipeline", pipeline},                 {10, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::warn ? "WARN" : "FAIL";
    failures += o.status == Status::fail;
    std::printf("[%s] %2d %s: %s\n", tag, c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
