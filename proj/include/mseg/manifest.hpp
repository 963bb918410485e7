#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mseg/image.hpp"

namespace mseg {

enum class Split { train, val, test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestRecord {
  std::string image_path;
  Split split = Split::train;
  std::optional<int> label;              // classification
  std::optional<std::string> mask_path;  // segmentation

  bool operator==(const ManifestRecord&) const = default;
};

/// One JSON object per line:
///   {"image_path": "a.pgm", "split": "train", "mask_path": "a_mask.pgm"}
///   {"image_path": "b.pgm", "split": "val", "label": 3}
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::vector<ManifestRecord> split(Split s) const;
  std::size_t count(Split s) const;
  std::filesystem::path resolve(const std::string& path) const;
  bool is_segmentation() const;

  bool operator==(const DatasetManifest& o) const { return records == o.records; }
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct SegSample {
  Image image;
  Image mask;
};

struct ClsSample {
  Image image;
  int label = 0;
};

/// Loads images and masks of one split; checks mask and image sizes agree.
std::vector<SegSample> load_segmentation_split(const DatasetManifest& manifest, Split split);
std::vector<ClsSample> load_classification_split(const DatasetManifest& manifest, Split split);

}  // namespace mseg
