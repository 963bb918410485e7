#pragma once

#include <filesystem>
#include <string>

#include "mseg/data.hpp"
#include "mseg/model.hpp"
#include "mseg/train.hpp"

namespace mseg {

/// Everything a CLI run reads from --config. JSON object with the optional
/// sections "model", "pretrain", "finetune", "augment", "normalize", "data";
/// unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  PretrainSchedule pretrain;
  SegSchedule finetune;
  /// Absent section means no augmentation; a present section starts from the
  /// AugmentSpec defaults.
  AugmentSpec augment = AugmentSpec::none();
  NormalizeSpec normalize;
  TilingSpec tiling;
  double scale_band = 0.0;  // fraction of rows cropped from the bottom
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON with every field present; parse_run_config accepts it.
std::string run_config_json(const RunConfig& config);

}  // namespace mseg
