// mseg: command-line front end for training, inference and data utilities.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mseg/checkpoint.hpp"
#include "mseg/cluster.hpp"
#include "mseg/config.hpp"
#include "mseg/errors.hpp"
#include "mseg/gradcheck.hpp"
#include "mseg/image.hpp"
#include "mseg/manifest.hpp"
#include "mseg/parallel.hpp"
#include "mseg/train.hpp"

namespace fs = std::filesystem;
using namespace mseg;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = ".";
};

RunConfig read_config(const Globals& g) { return g.config.empty() ? RunConfig{} : load_run_config(g.config); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// Model rebuilt from the config and filled from a checkpoint of the same
// architecture.
Model load_model(const RunConfig& rc, const std::string& checkpoint, std::uint64_t seed) {
  Model model(rc.model, seed);
  const auto report = load_pretrained(model, load_checkpoint(checkpoint), LoadPolicy::full);
  if (!report.mismatched.empty() || !report.skipped.empty()) {
    throw ValidationError(checkpoint + " does not match the configured model (" +
                          std::to_string(report.mismatched.size()) + " shape mismatches, " +
                          std::to_string(report.skipped.size()) + " missing tensors; first: " +
                          (report.mismatched.empty() ? report.skipped.front() : report.mismatched.front()) + ")");
  }
  return model;
}

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %d phase %d lr %.3g loss %.6f val %.6f", e.epoch, e.phase, e.lr, e.train_loss, e.val_metric);
  if (e.val_top5 >= 0) std::printf(" top5 %.6f", e.val_top5);
  std::printf("\n");
  std::fflush(stdout);
}

TrainOptions train_options(const RunConfig& rc, const fs::path& out, const std::string& init,
                           const std::string& policy) {
  TrainOptions o;
  o.augment = rc.augment;
  o.normalize = rc.normalize;
  o.out_dir = out;
  o.config_json = run_config_json(rc);
  o.on_epoch = print_epoch;
  if (!init.empty()) o.init = InitSpec{load_checkpoint(init), parse_load_policy(policy)};
  return o;
}

void finish_run(const TrainResult& r, const RunConfig& rc, const fs::path& out) {
  write_run_record(r.record, out);
  write_text(out / "config.json", run_config_json(rc));
  for (const auto& n : r.record.notes) std::printf("note: %s\n", n.c_str());
  std::printf("best epoch %d metric %.6f -> %s\n", r.record.best_epoch, r.record.best_metric,
              (out / r.record.best_checkpoint).string().c_str());
}

int run_gradcheck(const Globals& g, int rounds, int samples) {
  bool ok = true;
  constexpr double kTol = 1e-5;
  auto report = [&](const GradCheckResult& r) {
    const bool pass = r.passed(kTol);
    ok = ok && pass;
    std::printf("%-28s %s  checked %lld  max_rel %.3e\n", r.name.c_str(), pass ? "ok  " : "FAIL",
                static_cast<long long>(r.checked), r.max_rel_error);
  };
  for (const auto& r : run_op_gradient_suite(g.seed, rounds)) report(r);
  for (auto v : {Variant::cs_unet, Variant::swin_unet, Variant::unet}) {
    auto c = gradcheck_model_config();
    c.variant = v;
    report(check_model_gradients(c, g.seed, samples));
  }
  if (!ok) throw NumericError("gradient check failed (tolerance 1e-5)");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid CNN/Swin segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (1 = bit-stable)")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  std::string manifest, init, policy = "encoder_only", checkpoint, image, mask, split = "test";
  int k = 0, rounds = 2, samples = 3, tile = 0;
  std::string tile_policy;
  double scale_band = -1;

  auto* pretrain = app.add_subcommand("pretrain", "Train a classifier on a labelled manifest");
  pretrain->add_option("--manifest", manifest, "Classification manifest (JSONL)")->required();
  pretrain->add_option("--init", init, "Checkpoint to start from");
  pretrain->add_option("--policy", policy, "encoder_only, encoder_and_decoder or full");

  auto* finetune = app.add_subcommand("finetune", "Two-phase segmentation training");
  finetune->add_option("--manifest", manifest, "Segmentation manifest (JSONL)")->required();
  finetune->add_option("--init", init, "Pre-trained checkpoint");
  finetune->add_option("--policy", policy, "encoder_only, encoder_and_decoder or full");

  auto* predict_cmd = app.add_subcommand("predict", "Write the class mask of one image");
  predict_cmd->add_option("--checkpoint", checkpoint)->required();
  predict_cmd->add_option("--image", image)->required();
  predict_cmd->add_option("--mask", mask, "Output path (.pgm, or .png); default <out>/<stem>_mask.pgm");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Per-image IoU and mean/std over a split");
  evaluate_cmd->add_option("--checkpoint", checkpoint)->required();
  evaluate_cmd->add_option("--manifest", manifest)->required();
  evaluate_cmd->add_option("--split", split, "train, val or test");

  auto* tile_cmd = app.add_subcommand("tile", "Cut an image into model-sized tiles");
  tile_cmd->add_option("--image", image)->required();
  tile_cmd->add_option("--tile", tile, "Tile side (default from config)");
  tile_cmd->add_option("--policy", tile_policy, "none or cover");
  tile_cmd->add_option("--scale-band", scale_band, "Fraction of rows removed from the bottom first");

  std::vector<std::string> images;
  auto* cluster_cmd = app.add_subcommand("cluster", "Pseudo-label images by k-means on encoder features");
  cluster_cmd->add_option("--checkpoint", checkpoint, "Classifier checkpoint")->required();
  cluster_cmd->add_option("--k", k, "Number of clusters")->required();
  cluster_cmd->add_option("--images", images, "Image files");
  cluster_cmd->add_option("--manifest", manifest, "Take images from this manifest instead");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck_cmd->add_option("--rounds", rounds, "Random cases per primitive");
  gradcheck_cmd->add_option("--samples", samples, "Probed coordinates per model tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    set_num_threads(g.threads);
    const fs::path out = g.out;
    const auto rc = read_config(g);
    if (*pretrain || *finetune) {
      fs::create_directories(out);
      const auto m = load_manifest(manifest);
      const auto opts = train_options(rc, out, init, policy);
      const auto r = *pretrain ? pretrain_classifier(rc.model, m, rc.pretrain, g.seed, opts)
                               : finetune_segmentation(rc.model, m, rc.finetune, g.seed, opts);
      finish_run(r, rc, out);
    } else if (*predict_cmd) {
      const auto model = load_model(rc, checkpoint, g.seed);
      fs::path target = mask;
      if (target.empty()) {
        fs::create_directories(out);
        target = out / (fs::path(image).stem().string() + "_mask.pgm");
      }
      predict(model, image, target, rc.normalize);
      std::printf("%s\n", target.string().c_str());
    } else if (*evaluate_cmd) {
      const auto model = load_model(rc, checkpoint, g.seed);
      const auto samples_split = load_segmentation_split(load_manifest(manifest), parse_split(split));
      const auto report = evaluate(model, samples_split, rc.model.num_classes, rc.normalize);
      fs::create_directories(out);
      write_text(out / "eval.json", eval_report_json(report));
      std::ostringstream lines;
      for (std::size_t i = 0; i < report.image_mean_iou.size(); ++i) {
        lines << "image=" << i << " iou=" << report.image_mean_iou[i] << '\n';
      }
      lines << "mean_iou=" << report.mean << " std_iou=" << report.std << " (population, n="
            << report.image_mean_iou.size() << ")\n";
      write_text(out / "eval.txt", lines.str());
      std::printf("%s", lines.str().c_str());
    } else if (*tile_cmd) {
      TilingSpec spec = rc.tiling;
      if (tile > 0) spec.tile = tile;
      if (!tile_policy.empty()) spec.policy = parse_tile_policy(tile_policy);
      const double band = scale_band >= 0 ? scale_band : rc.scale_band;
      Image im = read_image(image);
      if (band > 0) im = crop_scale_band(im, band);
      fs::create_directories(out);
      const auto ext = im.channels == 1 ? ".pgm" : ".ppm";
      const auto stem = fs::path(image).stem().string();
      for (const auto& t : tile_image(im, spec)) {
        const auto p = out / (stem + "_y" + std::to_string(t.y) + "_x" + std::to_string(t.x) + ext);
        write_image(t.image, p);
        std::printf("%s\n", p.string().c_str());
      }
    } else if (*cluster_cmd) {
      const auto model = load_model(rc, checkpoint, g.seed);
      std::vector<fs::path> paths;
      if (!manifest.empty()) {
        const auto m = load_manifest(manifest);
        for (const auto& r : m.records) paths.push_back(fs::absolute(m.resolve(r.image_path)));
      }
      for (const auto& p : images) paths.push_back(fs::absolute(p));
      if (paths.empty()) throw ValidationError("cluster needs --images or --manifest");
      const auto labelled = pseudo_label(paths, model, k, g.seed);
      fs::create_directories(out);
      save_manifest(labelled, out / "pseudo_labels.jsonl");
      std::printf("%s\n", (out / "pseudo_labels.jsonl").string().c_str());
    } else if (*gradcheck_cmd) {
      return run_gradcheck(g, rounds, samples);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
