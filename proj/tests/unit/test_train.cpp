#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "../support/oracles.hpp"
#include "../support/synth.hpp"
#include "doctest.h"
#include "json.hpp"
#include "mseg/config.hpp"
#include "mseg/errors.hpp"
#include "mseg/ops.hpp"
#include "mseg/train.hpp"

using namespace mseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mseg_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig small_seg() {
  ModelConfig c;
  c.input_size = 16;
  c.patch = 2;
  c.embed_dim = 4;
  c.depths = {1, 1, 1, 1};
  c.heads = {1, 1, 1, 1};
  c.window = 2;
  c.num_classes = 3;
  c.mlp_ratio = 2.0;
  return c;
}

ModelConfig small_cls(int classes) {
  auto c = small_seg();
  c.variant = Variant::classifier;
  c.num_classes = classes;
  return c;
}

void set_param(Model& m, const std::string& name, const std::vector<double>& v) {
  auto data = m.parameters().at(name).mutable_data();
  REQUIRE(data.size() == v.size());
  std::copy(v.begin(), v.end(), data.begin());
}

void zero_param(Model& m, const std::string& name) {
  for (auto& x : m.parameters().at(name).mutable_data()) x = 0.0;
}

bool same_values(const Checkpoint& a, const ParameterStore& b) {
  if (a.tensors.size() != b.size()) return false;
  for (const auto& nt : a.tensors) {
    const auto x = nt.tensor.data();
    const auto y = b.at(nt.name).data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cosine_warmup_lr") {
  PretrainSchedule s;
  CHECK(cosine_warmup_lr(0, s) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(cosine_warmup_lr(5, s) == 1e-3);
  // min + 0.5 (base - min)(1 + cos(pi * 24/25))
  CHECK(cosine_warmup_lr(29, s) == doctest::Approx(0.5e-3 * (1 + std::cos(M_PI * 24.0 / 25.0))).epsilon(1e-12));
  CHECK(cosine_warmup_lr(29, s) == doctest::Approx(3.9426e-6).epsilon(1e-4));
  for (int e = 1; e < s.epochs; ++e) {
    if (e <= s.warmup_epochs) {
      CHECK(cosine_warmup_lr(e, s) >= cosine_warmup_lr(e - 1, s));
    } else {
      CHECK(cosine_warmup_lr(e, s) <= cosine_warmup_lr(e - 1, s));
    }
  }
  s.min_lr = 1e-5;
  CHECK(cosine_warmup_lr(s.warmup_epochs, s) == s.base_lr);
  for (int e = s.warmup_epochs; e < s.epochs; ++e) CHECK(cosine_warmup_lr(e, s) >= s.min_lr);
  CHECK_THROWS_AS(cosine_warmup_lr(-1, s), ValidationError);
  CHECK_THROWS_AS(cosine_warmup_lr(30, s), ValidationError);
}

TEST_CASE("schedule defaults and validation") {
  const auto ft = PretrainSchedule::fine_tune();
  CHECK(ft.base_lr == 1e-5);
  CHECK(ft.weight_decay == 1e-8);
  PretrainSchedule p;
  CHECK(p.batch == 128);
  CHECK(p.weight_decay == 0.05);
  p.warmup_epochs = p.epochs;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  SegSchedule s;
  CHECK(s.phase1_lr == 2e-4);
  CHECK(s.phase2_lr == 1e-5);
  CHECK(s.patience == 30);
  s.phase2_lr = 1e-3;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = SegSchedule{};
  s.patience = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("early_stop") {
  CHECK(early_stop({0.5, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6}, 5));
  CHECK_FALSE(early_stop({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}, 5));
  CHECK_FALSE(early_stop({0.5, 0.4, 0.3}, 5));
  CHECK_FALSE(early_stop({0.5, 0.4, 0.3, 0.2, 0.1}, 5));
  CHECK(early_stop({0.5, 0.4, 0.3, 0.2, 0.1, 0.5}, 5));
  CHECK_FALSE(early_stop({0.5, 0.4, 0.3, 0.2, 0.1, 0.51}, 5));
  CHECK(early_stop({0.5, 0.4, 0.3, 0.2, 0.1, 0.51}, 5, 0.02));
  CHECK_THROWS_AS(early_stop({0.5}, 0), ValidationError);
}

TEST_CASE("cross_entropy matches the softmax oracle") {
  Rng rng(3);
  const auto logits = Tensor::randn({4, 5}, rng, DType::f64);
  const std::vector<std::int32_t> labels{0, 4, 2, 2};
  double expect = 0;
  const auto x = logits.data();
  for (int n = 0; n < 4; ++n) {
    double z = 0;
    for (int k = 0; k < 5; ++k) z += std::exp(x[n * 5 + k]);
    expect -= std::log(std::exp(x[n * 5 + labels[n]]) / z) / 4;
  }
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx(expect).epsilon(1e-12));
  const std::vector<std::int32_t> bad{0, 5, 0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, bad), ValidationError);
}

TEST_CASE("pretrain_classifier") {
  const auto dir = scratch("pretrain");
  const auto manifest = load_manifest(synth::write_texture_dataset(dir / "data", 16, 4, 3, 2, 5));
  PretrainSchedule s;
  s.epochs = 3;
  s.warmup_epochs = 1;
  s.batch = 4;
  s.patience = 5;
  const auto cfg = small_cls(4);

  SUBCASE("zero learning rate leaves parameters unchanged") {
    s.base_lr = 0;
    const auto r = pretrain_classifier(cfg, manifest, s, 11);
    Model fresh(cfg, 11);
    CHECK(same_values(r.best, fresh.parameters()));
    CHECK(r.record.epochs.size() == 3);
  }
  SUBCASE("same seed gives identical records and checkpoints") {
    TrainOptions o;
    o.augment = AugmentSpec{};
    o.out_dir = dir / "a";
    const auto a = pretrain_classifier(cfg, manifest, s, 4, o);
    o.out_dir = dir / "b";
    const auto b = pretrain_classifier(cfg, manifest, s, 4, o);
    CHECK(a.record == b.record);
    CHECK(encode_checkpoint(a.best) == encode_checkpoint(b.best));
    std::ifstream fa(dir / "a" / "best.mseg", std::ios::binary), fb(dir / "b" / "best.mseg", std::ios::binary);
    const std::string sa{std::istreambuf_iterator<char>(fa), {}}, sb{std::istreambuf_iterator<char>(fb), {}};
    CHECK(!sa.empty());
    CHECK(sa == sb);
    CHECK(a.record.epochs_to_converge == a.record.best_epoch + 1);
    double best = -1;
    for (const auto& e : a.record.epochs) best = std::max(best, e.val_metric);
    CHECK(a.record.best_metric == best);
    for (std::size_t i = 0; i < a.record.epochs.size(); ++i) {
      CHECK(a.record.epochs[i].lr == cosine_warmup_lr(static_cast<int>(i), s));
    }
  }
  SUBCASE("segmentation configs are rejected") {
    CHECK_THROWS_AS(pretrain_classifier(small_seg(), manifest, s, 1), ValidationError);
  }
  SUBCASE("empty train split") {
    DatasetManifest only_val = manifest;
    std::erase_if(only_val.records, [](const ManifestRecord& r) { return r.split == Split::train; });
    CHECK_THROWS_AS(pretrain_classifier(cfg, only_val, s, 1), ValidationError);
  }
}

TEST_CASE("pretrain on a 74-class corpus keeps top-5 >= top-1") {
  const auto dir = scratch("pretrain74");
  const auto manifest = load_manifest(synth::write_texture_dataset(dir, 16, 74, 1, 1, 8));
  PretrainSchedule s;
  s.epochs = 2;
  s.warmup_epochs = 1;
  s.batch = 32;
  const auto r = pretrain_classifier(small_cls(74), manifest, s, 2);
  REQUIRE(r.record.epochs.size() == 2);
  for (const auto& e : r.record.epochs) {
    CHECK(e.val_top5 >= e.val_metric);
    CHECK(e.val_metric >= 0.0);
    CHECK(e.val_top5 <= 1.0);
  }
}

TEST_CASE("finetune_segmentation") {
  const auto dir = scratch("finetune");
  const auto manifest = load_manifest(synth::write_seg_dataset(dir / "data", 16, 3, 3, 2, 1, 21));
  SegSchedule s;
  s.patience = 1;
  s.max_epochs_per_phase = 3;
  s.batch = 2;
  const auto cfg = small_seg();

  SUBCASE("learning-rate trace drops exactly once") {
    const auto r = finetune_segmentation(cfg, manifest, s, 3);
    int drops = 0;
    REQUIRE(!r.record.epochs.empty());
    CHECK(r.record.epochs.front().lr == 2e-4);
    CHECK(r.record.epochs.back().lr == 1e-5);
    for (std::size_t i = 1; i < r.record.epochs.size(); ++i) {
      const auto& a = r.record.epochs[i - 1];
      const auto& b = r.record.epochs[i];
      CHECK(b.epoch == a.epoch + 1);
      if (b.lr != a.lr) {
        ++drops;
        CHECK(a.lr == 2e-4);
        CHECK(b.lr == 1e-5);
        CHECK(b.phase == 2);
      }
    }
    CHECK(drops == 1);
    double best = -1;
    for (const auto& e : r.record.epochs) best = std::max(best, e.val_metric);
    CHECK(r.record.best_metric == best);
    CHECK(r.record.epochs_to_converge == r.record.best_epoch + 1);
    CHECK(r.record.initial_val_metric.has_value());
  }
  SUBCASE("zero rates in both phases leave parameters bitwise unchanged") {
    s.phase1_lr = 0;
    s.phase2_lr = 0;
    const auto r = finetune_segmentation(cfg, manifest, s, 9);
    Model fresh(cfg, 9);
    CHECK(same_values(r.best, fresh.parameters()));
  }
  SUBCASE("one-shot manifest trains and predicts a mask") {
    DatasetManifest one;
    one.base_dir = manifest.base_dir;
    one.records.push_back(manifest.split(Split::train).front());
    s.max_epochs_per_phase = 2;
    const auto r = finetune_segmentation(cfg, one, s, 5);
    CHECK(!r.record.notes.empty());
    Model m(cfg, 0);
    load_pretrained(m, r.best, LoadPolicy::full);
    const auto out = dir / "oneshot_mask.pgm";
    predict(m, one.resolve(one.records[0].image_path), out);
    const auto mask = read_image(out);
    CHECK(mask.width == 16);
    CHECK(mask.height == 16);
    CHECK(mask.channels == 1);
    for (auto v : mask.pixels) CHECK(v < 3);
  }
  SUBCASE("self initialization reproduces the checkpoint's IoU") {
    Model donor(cfg, 77);
    const auto ck = checkpoint_from(donor.parameters());
    const auto val = load_segmentation_split(manifest, Split::val);
    const double expect = evaluate(donor, val, 3).mean;
    TrainOptions o;
    o.init = InitSpec{ck, LoadPolicy::full};
    s.max_epochs_per_phase = 1;
    const auto r = finetune_segmentation(cfg, manifest, s, 1, o);
    REQUIRE(r.record.initial_val_metric.has_value());
    CHECK(*r.record.initial_val_metric == expect);
  }
  SUBCASE("incompatible init checkpoint") {
    auto other = cfg;
    other.embed_dim = 8;
    other.heads = {2, 2, 2, 2};
    Model donor(other, 1);
    TrainOptions o;
    o.init = InitSpec{checkpoint_from(donor.parameters()), LoadPolicy::encoder_only};
    CHECK_THROWS_AS(finetune_segmentation(cfg, manifest, s, 1, o), ValidationError);
  }
  SUBCASE("classifier configs and empty splits are rejected") {
    CHECK_THROWS_AS(finetune_segmentation(small_cls(3), manifest, s, 1), ValidationError);
    DatasetManifest empty = manifest;
    std::erase_if(empty.records, [](const ManifestRecord& r) { return r.split == Split::train; });
    CHECK_THROWS_AS(finetune_segmentation(cfg, empty, s, 1), ValidationError);
  }
}

TEST_CASE("SegmentationTrainer reports non-finite losses") {
  auto cfg = small_seg();
  Model m(cfg, 1);
  for (auto& x : m.parameters().at("head.bias").mutable_data()) x = std::nan("");
  SegmentationTrainer t(m, {1.0, 1.0, 1.0});
  Rng rng(1);
  const auto x = Tensor::randn({1, 3, 16, 16}, rng, DType::f32);
  const auto target = make_label_map({1, 16, 16}, std::vector<std::int32_t>(256, 0));
  CHECK_THROWS_AS(t.step(x, target, 1e-3, rng), NumericError);
}

TEST_CASE("evaluate aggregates per-image IoU") {
  CHECK(mean_and_std({0.8, 0.6}).first == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(mean_and_std({0.8, 0.6}).second == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(mean_and_std({0.3}).second == 0.0);
  CHECK_THROWS_AS(mean_and_std({}), ValidationError);

  Image m1(4, 4, 1), m2(4, 4, 1);
  for (int y = 0; y < 4; ++y) {
    for (int x = 2; x < 4; ++x) m1.at(y, x) = 1;
  }
  m2.at(0, 0) = 1;
  const std::vector<SegSample> samples{{Image(4, 4, 1, 100), m1}, {Image(4, 4, 1, 100), m2}};

  SUBCASE("perfect predictions") {
    std::vector<LabelMap> preds;
    for (const auto& s : samples) preds.push_back(make_label_map({1, 4, 4}, mask_labels(s.mask, 2)));
    const auto r = evaluate_predictions(preds, samples, 2);
    CHECK(r.mean == 1.0);
    CHECK(r.std == 0.0);
  }
  SUBCASE("single image") {
    const std::vector<SegSample> one{samples[0]};
    const auto r = evaluate_predictions({make_label_map({1, 4, 4}, std::vector<std::int32_t>(16, 0))}, one, 2);
    // class 0: 8/16, class 1: 0/8
    CHECK(r.image_mean_iou[0] == doctest::Approx(0.25));
    CHECK(r.std == 0.0);
  }
  SUBCASE("matches the per-class oracle") {
    Rng rng(4);
    std::vector<LabelMap> preds;
    for (int i = 0; i < 2; ++i) {
      std::vector<std::int32_t> l(16);
      for (auto& v : l) v = static_cast<std::int32_t>(rng() % 2);
      preds.push_back(make_label_map({1, 4, 4}, l));
    }
    const auto r = evaluate_predictions(preds, samples, 2);
    std::vector<double> means;
    for (int i = 0; i < 2; ++i) {
      const auto ref = oracle::iou_per_class(preds[static_cast<std::size_t>(i)].labels,
                                             mask_labels(samples[static_cast<std::size_t>(i)].mask, 2), 2);
      double s = 0;
      int n = 0;
      for (double v : ref) {
        if (v >= 0) {
          s += v;
          ++n;
        }
      }
      means.push_back(s / n);
      CHECK(r.image_mean_iou[static_cast<std::size_t>(i)] == doctest::Approx(means.back()).epsilon(1e-15));
    }
    const double mu = (means[0] + means[1]) / 2;
    CHECK(r.mean == doctest::Approx(mu).epsilon(1e-15));
    CHECK(r.std == doctest::Approx(std::abs(means[0] - means[1]) / 2).epsilon(1e-12));
    const auto j = nlohmann::json::parse(eval_report_json(r));
    CHECK(j["std_kind"] == "population");
    CHECK(j["images"].size() == 2);
  }
  SUBCASE("empty split") {
    CHECK_THROWS_AS(evaluate_predictions({}, {}, 2), ValidationError);
  }
}

TEST_CASE("stitch plan gives each pixel to its most central tile") {
  const auto plan = plan_stitch(700, 600, 512);
  REQUIRE(plan.origins.size() == 4);
  for (int y = 0; y < 700; y += 7) {
    for (int x = 0; x < 600; x += 7) {
      const int owner = plan.owner[static_cast<std::size_t>(y) * 600 + x];
      REQUIRE(owner >= 0);
      const auto [oy, ox] = plan.origins[static_cast<std::size_t>(owner)];
      CHECK((y >= oy && y < oy + 512 && x >= ox && x < ox + 512));
      auto centrality = [&](int ty, int tx) {
        return std::min(std::min(y - ty, ty + 511 - y), std::min(x - tx, tx + 511 - x));
      };
      for (const auto& [ty, tx] : plan.origins) {
        if (y >= ty && y < ty + 512 && x >= tx && x < tx + 512) CHECK(centrality(ty, tx) <= centrality(oy, ox));
      }
    }
  }
  // Corner pixels lie in one tile only.
  CHECK(plan.owner[0] == 0);
  CHECK(plan.owner[static_cast<std::size_t>(699) * 600 + 599] == 3);
}

TEST_CASE("predict") {
  const auto cfg = small_seg();
  const auto dir = scratch("predict");
  Rng rng(6);
  Image im(16, 16, 1);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng() % 256);

  SUBCASE("constant logits give a constant mask") {
    Model m(cfg, 2);
    zero_param(m, "head.weight");
    set_param(m, "head.bias", {0.0, 1.0, 0.0});
    predict(m, [&] {
      write_pnm(im, dir / "in.pgm");
      return dir / "in.pgm";
    }(), dir / "out.pgm");
    const auto mask = read_image(dir / "out.pgm");
    CHECK(mask.pixels == std::vector<std::uint8_t>(256, 1));
    predict(m, dir / "in.pgm", dir / "out.png");
    CHECK(read_image(dir / "out.png") == mask);
  }
  SUBCASE("input-sized images are predicted directly") {
    Model m(cfg, 2);
    ForwardContext ctx;
    const auto direct = argmax_classes(m.forward(reshape(normalize(im, {}, cfg.dtype), {1, 3, 16, 16}), ctx));
    CHECK(predict_labels(m, im).labels == direct.labels);
  }
  SUBCASE("larger images are stitched from tile predictions") {
    Model m(cfg, 3);
    Image big(24, 20, 1);
    for (auto& p : big.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    const auto stitched = predict_labels(m, big);
    CHECK(stitched.height() == 20);
    CHECK(stitched.width() == 24);
    const auto plan = plan_stitch(20, 24, 16);
    for (std::size_t t = 0; t < plan.origins.size(); ++t) {
      const auto [oy, ox] = plan.origins[t];
      const auto tile = predict_labels(m, crop(big, oy, ox, 16, 16));
      for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
          const auto p = static_cast<std::size_t>(oy + y) * 24 + (ox + x);
          if (plan.owner[p] == static_cast<int>(t)) {
            CHECK(stitched.labels[p] == tile.labels[static_cast<std::size_t>(y) * 16 + x]);
          }
        }
      }
    }
  }
  SUBCASE("errors") {
    Model m(cfg, 2);
    CHECK_THROWS_AS(predict_labels(m, Image(8, 8, 1)), ValidationError);
    CHECK_THROWS_AS(predict(m, dir / "missing.pgm", dir / "x.pgm"), IoError);
  }
}

TEST_CASE("run record output") {
  RunRecord r;
  r.kind = "finetune";
  r.seed = 5;
  r.best_epoch = 1;
  r.best_metric = 0.5;
  r.epochs_to_converge = 2;
  r.best_checkpoint = "best.mseg";
  r.config_json = R"({"model": {"patch": 2}})";
  r.initial_val_metric = 0.25;
  r.epochs = {{0, 1, 1.5, 0.4, 2e-4, -1}, {1, 2, 1.2, 0.5, 1e-5, -1}};
  const auto j = nlohmann::json::parse(run_record_json(r));
  CHECK(j["kind"] == "finetune");
  CHECK(j["best_epoch"] == 1);
  CHECK(j["epochs"].size() == 2);
  CHECK(j["epochs"][1]["lr"] == 1e-5);
  CHECK(j["config"]["model"]["patch"] == 2);
  CHECK(j["initial_val_metric"] == 0.25);
  const auto text = run_record_metrics(r);
  CHECK(text.find("epoch=0 phase=1 lr=0.0002 train_loss=1.5 val_metric=0.4\n") == 0);
  const auto dir = scratch("record");
  write_run_record(r, dir);
  CHECK(fs::exists(dir / "run.json"));
  CHECK(fs::exists(dir / "metrics.txt"));
}

TEST_CASE("run config") {
  SUBCASE("empty object gives defaults") {
    const auto c = parse_run_config("{}");
    CHECK(c.model.input_size == 224);
    CHECK(c.pretrain.epochs == 30);
    CHECK(c.finetune.phase1_lr == 2e-4);
    CHECK(c.augment.hflip_p == 0.0);
    CHECK(c.tiling.tile == 512);
  }
  SUBCASE("sections override fields and the snapshot round-trips") {
    const auto c = parse_run_config(R"({
      "model": {"variant": "classifier", "input_size": 32, "patch": 2, "embed_dim": 4,
                "depths": [1, 1, 1, 1], "heads": [1, 1, 1, 1], "window": 2, "num_classes": 74, "dtype": "f64"},
      "finetune": {"patience": 3, "max_epochs_per_phase": 10},
      "augment": {"noise_p": 0.0},
      "data": {"tile": 256, "tile_policy": "none", "scale_band": 0.1}
    })");
    CHECK(c.model.variant == Variant::classifier);
    CHECK(c.model.dtype == DType::f64);
    CHECK(c.model.num_classes == 74);
    CHECK(c.finetune.patience == 3);
    CHECK(c.augment.hflip_p == 0.5);
    CHECK(c.augment.noise_p == 0.0);
    CHECK(c.tiling.policy == TilePolicy::none);
    const auto text = run_config_json(c);
    CHECK(run_config_json(parse_run_config(text)) == text);
  }
  SUBCASE("rejections") {
    CHECK_THROWS_AS(parse_run_config("{"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"modle": {}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"depth": [2,2,2,2]}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"patch": "four"}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"dtype": "f16"}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"model": {"input_size": 100}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"finetune": {"phase1_lr": 1e-6}})"), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"data": {"scale_band": 1.0}})"), ValidationError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
  }
}
