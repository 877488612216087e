#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <limits>

#include "gradcheck.hpp"
#include "xbert/geometry.hpp"
#include "xbert/rng.hpp"

using namespace xbert;

namespace {

PointCloud random_cloud(Rng& rng, int n) {
  PointCloud c;
  c.points.resize(static_cast<size_t>(n));
  for (auto& p : c.points) {
    for (auto& v : p) v = rng.normal_float(0.0f, 1.0f);
  }
  return c;
}

// O(N * g * |S|) reference: recompute the min distance to the selected set
// from scratch at every round.
std::vector<int> fps_oracle(const PointCloud& cloud, int g, int start) {
  std::vector<int> sel = {start};
  while (static_cast<int>(sel.size()) < g) {
    int best = -1;
    float best_d = -1.0f;
    for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
      float d = std::numeric_limits<float>::max();
      for (int s : sel) d = std::min(d, squared_distance(cloud.points[static_cast<size_t>(i)], cloud.points[static_cast<size_t>(s)]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

std::vector<int> knn_oracle(const PointCloud& cloud, const Vec3& center, int k) {
  std::vector<std::pair<float, int>> d;
  for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
    d.emplace_back(squared_distance(center, cloud.points[static_cast<size_t>(i)]), i);
  }
  std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second < b.second;
  });
  std::vector<int> out;
  for (int j = 0; j < k; ++j) out.push_back(d[static_cast<size_t>(j)].second);
  return out;
}

}  // namespace

TEST_CASE("fps greedy max-min with lowest-index tie break") {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {0.1f, 0, 0}, {0, 1, 0}};
  REQUIRE(fps(c, 3, 0) == std::vector<int>{0, 1, 3});
  // Exhaustion returns every index.
  auto all = fps(c, 4, 2);
  std::sort(all.begin(), all.end());
  REQUIRE(all == std::vector<int>{0, 1, 2, 3});
  REQUIRE(fps(c, 1, 2) == std::vector<int>{2});
  REQUIRE_THROWS(fps(c, 5, 0));
}

TEST_CASE("fps matches the brute-force oracle on random clouds") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(63));
    const int g = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    const int start = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    PointCloud c = random_cloud(rng, n);
    const auto got = fps(c, g, start);
    REQUIRE(got == fps_oracle(c, g, start));
    // Selected indices are duplicate-free.
    auto sorted = got;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
}

TEST_CASE("knn basics") {
  Rng rng(5);
  PointCloud c = random_cloud(rng, 16);
  // A center on a cloud point ranks that point first.
  auto nb = knn(c, {c.points[7]}, 1);
  REQUIRE(nb[0][0] == 7);
  // k = N is a permutation of all indices.
  auto all = knn(c, {c.points[0]}, 16)[0];
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 16; ++i) REQUIRE(all[static_cast<size_t>(i)] == i);
  REQUIRE_THROWS(knn(c, {c.points[0]}, 17));
}

TEST_CASE("knn matches the brute-force oracle on random instances") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(63));
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    PointCloud c = random_cloud(rng, n);
    std::vector<Vec3> centers;
    for (int j = 0; j < 4; ++j) {
      centers.push_back({rng.normal_float(0, 1), rng.normal_float(0, 1), rng.normal_float(0, 1)});
    }
    const auto got = knn(c, centers, k);
    for (size_t ci = 0; ci < centers.size(); ++ci) {
      REQUIRE(got[ci] == knn_oracle(c, centers[ci], k));
    }
  }
}

TEST_CASE("group_and_normalize centers patches and stays translation equivariant") {
  Rng rng(17);
  PointCloud c = random_cloud(rng, 48);
  PatchSet ps = group_and_normalize(c, 8, 6, 3);
  for (const auto& patch : ps.patches) {
    Vec3 mean{0, 0, 0};
    for (const auto& p : patch) {
      for (int d = 0; d < 3; ++d) mean[static_cast<size_t>(d)] += p[static_cast<size_t>(d)];
    }
    for (int d = 0; d < 3; ++d) {
      REQUIRE(std::abs(mean[static_cast<size_t>(d)] / static_cast<float>(patch.size())) < 1e-5f);
    }
  }
  for (const auto& idx : ps.source_indices) {
    for (int i : idx) {
      REQUIRE(i >= 0);
      REQUIRE(i < 48);
    }
  }

  const Vec3 t{0.5f, -1.25f, 2.0f};
  PointCloud shifted = c;
  for (auto& p : shifted.points) {
    for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] += t[static_cast<size_t>(d)];
  }
  PatchSet ps2 = group_and_normalize(shifted, 8, 6, 3);
  for (int gi = 0; gi < 8; ++gi) {
    for (int d = 0; d < 3; ++d) {
      REQUIRE(ps2.centers[static_cast<size_t>(gi)][static_cast<size_t>(d)] ==
              Catch::Approx(ps.centers[static_cast<size_t>(gi)][static_cast<size_t>(d)] + t[static_cast<size_t>(d)]).margin(1e-5));
    }
    for (size_t j = 0; j < ps.patches[static_cast<size_t>(gi)].size(); ++j) {
      for (int d = 0; d < 3; ++d) {
        REQUIRE(ps2.patches[static_cast<size_t>(gi)][j][static_cast<size_t>(d)] ==
                Catch::Approx(ps.patches[static_cast<size_t>(gi)][j][static_cast<size_t>(d)]).margin(1e-5));
      }
    }
  }
}

TEST_CASE("group_and_normalize degenerate single patch") {
  Rng rng(19);
  PointCloud c = random_cloud(rng, 12);
  PatchSet ps = group_and_normalize(c, 1, 12, 4);
  REQUIRE(ps.group_count() == 1);
  REQUIRE(ps.patch_size() == 12);
}

TEST_CASE("chamfer identity, symmetry and hand value") {
  PointCloud x, y;
  x.points = {{0, 0, 0}};
  y.points = {{1, 0, 0}};
  REQUIRE(chamfer(x, x) == Catch::Approx(0.0f));
  REQUIRE(chamfer(x, y) == Catch::Approx(2.0f));
  Rng rng(23);
  PointCloud a = random_cloud(rng, 20);
  PointCloud b = random_cloud(rng, 30);
  REQUIRE(chamfer(a, b) == Catch::Approx(chamfer(b, a)));
  REQUIRE(chamfer(a, b) >= 0.0f);
  PointCloud empty;
  REQUIRE_THROWS(chamfer(a, empty));
}

TEST_CASE("chamfer_loss agrees with the scalar version and gradchecks") {
  Rng rng(29);
  PointCloud a = random_cloud(rng, 10);
  PointCloud b = random_cloud(rng, 14);
  Tensor ta = points_tensor(a.points);
  Tensor tb = points_tensor(b.points);
  REQUIRE(chamfer_loss(ta, tb).item() == Catch::Approx(chamfer(a, b)).epsilon(1e-5));

  ta.set_requires_grad(true);
  auto r = gradcheck::check({ta}, [&] { return chamfer_loss(ta, tb); });
  INFO("chamfer rel_err=" << r.rel_err);
  REQUIRE(r.ok);
}

TEST_CASE("xyz and binary round trips") {
  Rng rng(31);
  PointCloud c = random_cloud(rng, 25);
  const std::string xyz = "/tmp/xbert_test_cloud.xyz";
  const std::string bin = "/tmp/xbert_test_cloud.f32";
  save_xyz(xyz, c);
  PointCloud c1 = load_xyz(xyz);
  REQUIRE(c1.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      REQUIRE(c1.points[i][static_cast<size_t>(d)] == Catch::Approx(c.points[i][static_cast<size_t>(d)]).margin(1e-5));
    }
  }
  save_points_f32(bin, c);
  PointCloud c2 = load_points_f32(bin);
  REQUIRE(c2.points == c.points);
  std::remove(xyz.c_str());
  std::remove(bin.c_str());
}
