#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mseg/manifest.hpp"
#include "mseg/model.hpp"
#include "mseg/tensor.hpp"

namespace mseg {

/// Pooled final-stage encoder features, one row per image: [N, D].
/// Images are [3,H,W] tensors at the model's input size.
Tensor extract_features(const Model& encoder, const std::vector<Tensor>& images);

struct KMeansResult {
  std::vector<int> assignments;   // [N]
  std::vector<double> centroids;  // [k·D], row-major
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each assignment step
  int iterations = 0;
};

/// k-means++ seeding, then Lloyd iterations until the assignment stops
/// changing or max_iter is reached. An empty cluster is re-seeded at the
/// point farthest from its centroid.
KMeansResult kmeans(const Tensor& features, int k, std::uint64_t seed, int max_iter = 300);

/// extract_features -> kmeans; every record lands in the train split with
/// its cluster id as label.
DatasetManifest pseudo_label(const std::vector<std::filesystem::path>& images, const Model& encoder, int k,
                             std::uint64_t seed);

}  // namespace mseg
