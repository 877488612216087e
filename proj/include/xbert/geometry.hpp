#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "xbert/ops.hpp"
#include "xbert/tensor.hpp"

namespace xbert {

using Vec3 = std::array<float, 3>;

inline float squared_distance(const Vec3& a, const Vec3& b) {
  const float dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Vec3> points;
  int label = -1;

  size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw std::runtime_error("PointCloud: empty cloud");
    for (const auto& p : points) {
      for (float v : p) {
        if (!std::isfinite(v)) throw NonFiniteError("PointCloud: non-finite coordinate");
      }
    }
  }
};

// Patches are stored relative to their center and re-centered to zero mean;
// source_indices point back into the parent cloud.
struct PatchSet {
  std::vector<Vec3> centers;                   // g x 3
  std::vector<std::vector<Vec3>> patches;      // g x k x 3, zero-mean
  std::vector<std::vector<int>> source_indices;  // g x k

  int group_count() const { return static_cast<int>(centers.size()); }
  int patch_size() const { return patches.empty() ? 0 : static_cast<int>(patches[0].size()); }
};

// Greedy max-min farthest point sampling. Ties break toward the lowest
// index; deterministic given start_index.
inline std::vector<int> fps(const PointCloud& cloud, int g, int start_index) {
  const int n = static_cast<int>(cloud.size());
  if (g < 1 || g > n) {
    throw std::runtime_error("fps: requested " + std::to_string(g) + " samples from " + std::to_string(n) +
                             " points");
  }
  if (start_index < 0 || start_index >= n) throw std::runtime_error("fps: start index out of range");
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(g));
  picked.push_back(start_index);
  std::vector<float> min_d(static_cast<size_t>(n), std::numeric_limits<float>::max());
  for (int round = 1; round < g; ++round) {
    const Vec3& last = cloud.points[static_cast<size_t>(picked.back())];
    int best = -1;
    float best_d = -1.0f;
    for (int i = 0; i < n; ++i) {
      float& d = min_d[static_cast<size_t>(i)];
      d = std::min(d, squared_distance(cloud.points[static_cast<size_t>(i)], last));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

// For each center, the k nearest cloud points by Euclidean distance,
// ascending, ties toward the lowest index.
inline std::vector<std::vector<int>> knn(const PointCloud& cloud, const std::vector<Vec3>& centers, int k) {
  const int n = static_cast<int>(cloud.size());
  if (k < 1 || k > n) {
    throw std::runtime_error("knn: requested " + std::to_string(k) + " neighbors from " + std::to_string(n) +
                             " points");
  }
  std::vector<std::vector<int>> out;
  out.reserve(centers.size());
  std::vector<std::pair<float, int>> dist(static_cast<size_t>(n));
  for (const auto& c : centers) {
    for (int i = 0; i < n; ++i) {
      dist[static_cast<size_t>(i)] = {squared_distance(c, cloud.points[static_cast<size_t>(i)]), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
    std::vector<int> nb(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) nb[static_cast<size_t>(j)] = dist[static_cast<size_t>(j)].second;
    out.push_back(std::move(nb));
  }
  return out;
}

inline PatchSet group_and_normalize(const PointCloud& cloud, int g, int k, int start_index) {
  PatchSet ps;
  const auto center_idx = fps(cloud, g, start_index);
  ps.centers.reserve(static_cast<size_t>(g));
  for (int i : center_idx) ps.centers.push_back(cloud.points[static_cast<size_t>(i)]);
  ps.source_indices = knn(cloud, ps.centers, k);
  ps.patches.resize(static_cast<size_t>(g));
  for (int gi = 0; gi < g; ++gi) {
    auto& patch = ps.patches[static_cast<size_t>(gi)];
    patch.resize(static_cast<size_t>(k));
    const Vec3& c = ps.centers[static_cast<size_t>(gi)];
    Vec3 mean{0, 0, 0};
    for (int j = 0; j < k; ++j) {
      const Vec3& p = cloud.points[static_cast<size_t>(ps.source_indices[static_cast<size_t>(gi)][static_cast<size_t>(j)])];
      for (int d = 0; d < 3; ++d) {
        patch[static_cast<size_t>(j)][static_cast<size_t>(d)] = p[static_cast<size_t>(d)] - c[static_cast<size_t>(d)];
        mean[static_cast<size_t>(d)] += patch[static_cast<size_t>(j)][static_cast<size_t>(d)];
      }
    }
    for (int d = 0; d < 3; ++d) mean[static_cast<size_t>(d)] /= static_cast<float>(k);
    for (int j = 0; j < k; ++j) {
      for (int d = 0; d < 3; ++d) patch[static_cast<size_t>(j)][static_cast<size_t>(d)] -= mean[static_cast<size_t>(d)];
    }
  }
  return ps;
}

// Symmetric mean squared nearest-neighbor distance.
inline float chamfer(const PointCloud& x, const PointCloud& y) {
  if (x.points.empty() || y.points.empty()) throw std::runtime_error("chamfer: empty cloud");
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double acc = 0.0;
    for (const auto& p : from) {
      float best = std::numeric_limits<float>::max();
      for (const auto& q : to) best = std::min(best, squared_distance(p, q));
      acc += best;
    }
    return static_cast<float>(acc / static_cast<double>(from.size()));
  };
  return one_way(x.points, y.points) + one_way(y.points, x.points);
}

// ---------------------------------------------------------------- tensors

inline Tensor points_tensor(const std::vector<Vec3>& pts) {
  std::vector<float> data;
  data.reserve(pts.size() * 3);
  for (const auto& p : pts) {
    data.push_back(p[0]);
    data.push_back(p[1]);
    data.push_back(p[2]);
  }
  return Tensor::from(std::move(data), {static_cast<int>(pts.size()), 3});
}

inline std::vector<Vec3> tensor_points(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3) throw ShapeError("tensor_points: expected Nx3, got " + shape_str(t.shape()));
  std::vector<Vec3> out(static_cast<size_t>(t.dim(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = {t.values()[i * 3], t.values()[i * 3 + 1], t.values()[i * 3 + 2]};
  }
  return out;
}

// Differentiable Chamfer between an (n,3) prediction and an (m,3) target.
// Nearest-neighbor matching is resolved on the forward values (lowest index
// on ties); the loss itself is assembled from primitive ops.
inline Tensor chamfer_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 2 || pred.dim(1) != 3 || target.rank() != 2 || target.dim(1) != 3) {
    throw ShapeError("chamfer_loss: expected (n,3) and (m,3), got " + shape_str(pred.shape()) + " and " +
                     shape_str(target.shape()));
  }
  const int n = pred.dim(0), m = target.dim(0);
  if (n == 0 || m == 0) throw std::runtime_error("chamfer_loss: empty cloud");
  auto nearest = [](const Tensor& from, const Tensor& to) {
    std::vector<int> idx(static_cast<size_t>(from.dim(0)));
    for (int i = 0; i < from.dim(0); ++i) {
      const float* p = from.values().data() + static_cast<size_t>(i) * 3;
      float best = std::numeric_limits<float>::max();
      int best_j = 0;
      for (int j = 0; j < to.dim(0); ++j) {
        const float* q = to.values().data() + static_cast<size_t>(j) * 3;
        const float dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        const float d = dx * dx + dy * dy + dz * dz;
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      idx[static_cast<size_t>(i)] = best_j;
    }
    return idx;
  };
  const auto fwd = nearest(pred, target);
  const auto bwd = nearest(target, pred);
  Tensor d1 = sub(pred, gather_rows(target, fwd));
  Tensor d2 = sub(gather_rows(pred, bwd), target);
  Tensor term1 = mul_scalar(sum_all(mul(d1, d1)), 1.0f / static_cast<float>(n));
  Tensor term2 = mul_scalar(sum_all(mul(d2, d2)), 1.0f / static_cast<float>(m));
  return add(term1, term2);
}

// ---------------------------------------------------------------- file io

inline void save_xyz(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_xyz: cannot open '" + path + "'");
  char line[96];
  for (const auto& p : cloud.points) {
    std::snprintf(line, sizeof(line), "%.8g %.8g %.8g\n", static_cast<double>(p[0]),
                  static_cast<double>(p[1]), static_cast<double>(p[2]));
    out << line;
  }
}

inline PointCloud load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_xyz: cannot open '" + path + "'");
  PointCloud cloud;
  float x, y, z;
  while (in >> x >> y >> z) cloud.points.push_back({x, y, z});
  if (cloud.points.empty()) throw std::runtime_error("load_xyz: no points in '" + path + "'");
  return cloud;
}

inline void save_points_f32(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_points_f32: cannot open '" + path + "'");
  // Little-endian hosts only; asserted by the checkpoint layer as well.
  out.write(reinterpret_cast<const char*>(cloud.points.data()),
            static_cast<std::streamsize>(cloud.points.size() * sizeof(Vec3)));
}

inline PointCloud load_points_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("load_points_f32: cannot open '" + path + "'");
  const auto bytes = static_cast<size_t>(in.tellg());
  if (bytes == 0 || bytes % sizeof(Vec3) != 0) {
    throw std::runtime_error("load_points_f32: size of '" + path + "' is not a multiple of 12 bytes");
  }
  in.seekg(0);
  PointCloud cloud;
  cloud.points.resize(bytes / sizeof(Vec3));
  in.read(reinterpret_cast<char*>(cloud.points.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("load_points_f32: short read on '" + path + "'");
  return cloud;
}

}  // namespace xbert
