#include "mseg/cluster.hpp"

#include <limits>

#include "mseg/data.hpp"
#include "mseg/errors.hpp"
#include "mseg/ops.hpp"

namespace mseg {

Tensor extract_features(const Model& encoder, const std::vector<Tensor>& images) {
  MSEG_CHECK(!images.empty(), "extract_features needs at least one image");
  NoGradGuard no_grad;
  ForwardContext ctx;
  const auto D = encoder.feature_dim();
  std::vector<double> rows;
  rows.reserve(images.size() * static_cast<std::size_t>(D));
  for (const auto& im : images) {
    MSEG_CHECK(im.ndim() == 3, "extract_features expects [3,H,W] images");
    const auto batch = reshape(im, {1, im.dim(0), im.dim(1), im.dim(2)});
    const auto f = encoder.pooled_features(batch, ctx);
    rows.insert(rows.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), D}, std::move(rows), DType::f64);
}

namespace {

double sq_dist(const double* a, const double* b, std::int64_t D) {
  double s = 0;
  for (std::int64_t d = 0; d < D; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const Tensor& features, int k, std::uint64_t seed, int max_iter) {
  MSEG_CHECK(features.ndim() == 2, "kmeans expects features [N, D]");
  const auto N = features.dim(0), D = features.dim(1);
  if (k <= 0) throw ValidationError("kmeans needs k >= 1");
  if (k > N) throw ValidationError("kmeans needs k <= N (k=" + std::to_string(k) + ", N=" + std::to_string(N) + ")");
  if (max_iter < 1) throw ValidationError("kmeans needs max_iter >= 1");
  const auto x = features.data();
  auto point = [&](std::int64_t i) { return x.data() + i * D; };

  Rng rng(seed);
  KMeansResult r;
  r.centroids.resize(static_cast<std::size_t>(k * D));
  auto centroid = [&](int c) { return r.centroids.data() + static_cast<std::int64_t>(c) * D; };

  // k-means++ seeding.
  std::vector<double> best(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
  std::vector<char> chosen(static_cast<std::size_t>(N), 0);
  std::int64_t pick = std::uniform_int_distribution<std::int64_t>(0, N - 1)(rng);
  for (int c = 0; c < k; ++c) {
    chosen[static_cast<std::size_t>(pick)] = 1;
    std::copy_n(point(pick), D, centroid(c));
    if (c + 1 == k) break;
    double total = 0;
    for (std::int64_t i = 0; i < N; ++i) {
      best[static_cast<std::size_t>(i)] = std::min(best[static_cast<std::size_t>(i)], sq_dist(point(i), centroid(c), D));
      total += best[static_cast<std::size_t>(i)];
    }
    if (total > 0) {
      double t = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = -1;
      for (std::int64_t i = 0; i < N; ++i) {
        const double w = best[static_cast<std::size_t>(i)];
        if (w <= 0) continue;
        pick = i;
        if (t < w) break;
        t -= w;
      }
    } else {
      // Every remaining point coincides with a centroid: take an unused index.
      std::vector<std::int64_t> unused;
      for (std::int64_t i = 0; i < N; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) unused.push_back(i);
      }
      pick = unused[std::uniform_int_distribution<std::size_t>(0, unused.size() - 1)(rng)];
    }
  }

  r.assignments.assign(static_cast<std::size_t>(N), -1);
  std::vector<double> dist(static_cast<std::size_t>(N));
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double inertia = 0;
    for (std::int64_t i = 0; i < N; ++i) {
      int arg = 0;
      double bd = sq_dist(point(i), centroid(0), D);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(point(i), centroid(c), D);
        if (d < bd) {
          bd = d;
          arg = c;
        }
      }
      changed = changed || r.assignments[static_cast<std::size_t>(i)] != arg;
      r.assignments[static_cast<std::size_t>(i)] = arg;
      dist[static_cast<std::size_t>(i)] = bd;
      inertia += bd;
    }
    r.inertia = inertia;
    r.inertia_history.push_back(inertia);
    r.iterations = it + 1;
    if (!changed) break;

    std::vector<double> sums(static_cast<std::size_t>(k * D), 0.0);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    for (std::int64_t i = 0; i < N; ++i) {
      const int c = r.assignments[static_cast<std::size_t>(i)];
      ++counts[static_cast<std::size_t>(c)];
      for (std::int64_t d = 0; d < D; ++d) sums[static_cast<std::size_t>(c * D + d)] += point(i)[d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      for (std::int64_t d = 0; d < D; ++d) {
        centroid(c)[d] = sums[static_cast<std::size_t>(c * D + d)] / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] != 0) continue;
      std::int64_t far = -1;
      double fd = 0;
      for (std::int64_t i = 0; i < N; ++i) {
        const int own = r.assignments[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(own)] < 2) continue;
        const double d = sq_dist(point(i), centroid(own), D);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      if (far < 0) continue;
      std::copy_n(point(far), D, centroid(c));
      --counts[static_cast<std::size_t>(r.assignments[static_cast<std::size_t>(far)])];
      r.assignments[static_cast<std::size_t>(far)] = c;
      counts[static_cast<std::size_t>(c)] = 1;
    }
  }
  return r;
}

DatasetManifest pseudo_label(const std::vector<std::filesystem::path>& images, const Model& encoder, int k,
                             std::uint64_t seed) {
  MSEG_CHECK(!images.empty(), "pseudo_label needs at least one image");
  std::vector<Tensor> tensors;
  for (const auto& p : images) tensors.push_back(normalize(read_image(p), {}, encoder.config().dtype));
  const auto result = kmeans(extract_features(encoder, tensors), k, seed);
  DatasetManifest m;
  for (std::size_t i = 0; i < images.size(); ++i) {
    m.records.push_back({images[i].string(), Split::train, result.assignments[i], std::nullopt});
  }
  return m;
}

}  // namespace mseg
