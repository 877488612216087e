#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "xbert/synthdata.hpp"

using namespace xbert;

TEST_CASE("raw sphere samples sit on the sphere, raw cube samples on the surface") {
  Rng rng(3);
  ShapeSpec sphere{ShapeClass::sphere, 1.0f, 1.0f, 0.0f, 0};
  for (const auto& p : sample_surface(sphere, 200, rng)) {
    REQUIRE(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) == Catch::Approx(1.0f).margin(1e-5));
  }
  ShapeSpec cube{ShapeClass::cube, 1.0f, 1.0f, 0.0f, 0};
  for (const auto& p : sample_surface(cube, 200, rng)) {
    const float m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    REQUIRE(m == Catch::Approx(0.5f).margin(1e-5));
  }
}

TEST_CASE("generate_shape is deterministic per seed and unit-normalized") {
  ShapeSpec spec{ShapeClass::torus, 0.8f, 0.2f, 1.1f, 99};
  PointCloud a = generate_shape(spec, 128);
  PointCloud b = generate_shape(spec, 128);
  REQUIRE(a.points == b.points);
  float max_norm = 0.0f;
  for (const auto& p : a.points) max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  REQUIRE(max_norm == Catch::Approx(1.0f).margin(1e-5));
  ShapeSpec bad = spec;
  bad.size_a = -1.0f;
  REQUIRE_THROWS(generate_shape(bad, 128));
  REQUIRE_THROWS(generate_shape(spec, 32));
}

TEST_CASE("identity augmentation returns the input unchanged") {
  ShapeSpec spec{ShapeClass::cube, 1.0f, 1.0f, 0.3f, 7};
  PointCloud cloud = generate_shape(spec, 128);
  Rng rng(1);
  PointCloud out = augment_points(cloud, PointAugment::identity(), rng);
  REQUIRE(out.points == cloud.points);
}

TEST_CASE("rotation-only augmentation preserves pairwise distances") {
  ShapeSpec spec{ShapeClass::cylinder, 0.4f, 1.5f, 0.0f, 21};
  PointCloud cloud = generate_shape(spec, 96);
  PointAugment aug = PointAugment::identity();
  aug.rotate = true;
  Rng rng(5);
  PointCloud rotated = augment_points(cloud, aug, rng);
  for (size_t i = 0; i < 20; ++i) {
    for (size_t j = i + 1; j < 20; ++j) {
      REQUIRE(std::sqrt(squared_distance(rotated.points[i], rotated.points[j])) ==
              Catch::Approx(std::sqrt(squared_distance(cloud.points[i], cloud.points[j]))).margin(1e-5));
    }
  }
}

TEST_CASE("pure scaling multiplies the bounding radius") {
  ShapeSpec spec{ShapeClass::sphere, 1.0f, 1.0f, 0.0f, 4};
  PointCloud cloud = generate_shape(spec, 128);
  auto radius = [](const PointCloud& c) {
    float r = 0.0f;
    for (const auto& p : c.points) r = std::max(r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    return r;
  };
  PointAugment aug = PointAugment::identity();
  aug.scale_min = aug.scale_max = 1.17f;
  Rng rng(6);
  PointCloud scaled = augment_points(cloud, aug, rng);
  REQUIRE(radius(scaled) == Catch::Approx(1.17f * radius(cloud)).margin(1e-5));
}

TEST_CASE("depth render puts a single origin point at the image center") {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}};
  RenderedImage img = render_depth(cloud, 4, 32, 32);
  int nonzero = 0;
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      if (img.at(r, c) != 0.0f) {
        ++nonzero;
        REQUIRE(r == 16);
        REQUIRE(c == 16);
        REQUIRE(img.at(r, c) == Catch::Approx(0.5f));
      }
    }
  }
  REQUIRE(nonzero == 1);
}

TEST_CASE("depth render keeps the nearer point on a shared ray") {
  PointCloud cloud;
  cloud.points = {{0, 0, 0.5f}, {0, 0, -0.5f}};
  RenderedImage img = render_depth(cloud, 4, 32, 32);  // +z view
  REQUIRE(img.at(16, 16) == Catch::Approx(0.75f));
  REQUIRE_THROWS(render_depth(cloud, 4, 30, 32));
}

TEST_CASE("image augmentation identity and brightness contracts") {
  ShapeSpec spec{ShapeClass::cube, 1.0f, 1.0f, 0.5f, 11};
  PointCloud cloud = generate_shape(spec, 256);
  RenderedImage img = render_depth(cloud, 0, 32, 32);

  RenderedImage same = crop_resize_brighten(img, 32, 32, 0, 0, 1.0f);
  REQUIRE(same.pixels == img.pixels);

  float max_in = 0.0f, max_out = 0.0f;
  RenderedImage half = crop_resize_brighten(img, 32, 32, 0, 0, 0.5f);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    max_in = std::max(max_in, img.pixels[i]);
    max_out = std::max(max_out, half.pixels[i]);
  }
  REQUIRE(max_out == Catch::Approx(0.5f * max_in));

  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    RenderedImage aug = augment_image(img, ImageAugment{}, rng);
    for (size_t i = 0; i < aug.pixels.size(); ++i) {
      REQUIRE(aug.pixels[i] >= 0.0f);
      REQUIRE(aug.pixels[i] <= 1.0f);
    }
  }
}

TEST_CASE("pair samples are deterministic, augmented and multi-view") {
  Rng rng_a(31), rng_b(31);
  ShapeSpec spec{ShapeClass::cylinder, 0.4f, 1.6f, 0.2f, 77};
  PairSample a = make_pair_sample(spec, 128, 32, 32, 8, rng_a);
  PairSample b = make_pair_sample(spec, 128, 32, 32, 8, rng_b);
  REQUIRE(a.points_a.points == b.points_a.points);
  REQUIRE(a.image_a.pixels == b.image_a.pixels);
  REQUIRE(a.points_a.points != a.points_b.points);
  REQUIRE(a.image_a.view != a.image_b.view);
  REQUIRE(a.class_id == static_cast<uint32_t>(ShapeClass::cylinder));
}

TEST_CASE("sphere renders agree across views while cylinder views differ") {
  // Per-pixel splats are dominated by sampling noise, so views are compared
  // on 8x8 patch means, the granularity the image tokens see.
  auto patch_means = [](const RenderedImage& img, int p) {
    std::vector<double> out;
    for (int pr = 0; pr < img.height / p; ++pr) {
      for (int pc = 0; pc < img.width / p; ++pc) {
        double acc = 0.0;
        for (int r = 0; r < p; ++r) {
          for (int c = 0; c < p; ++c) acc += img.at(pr * p + r, pc * p + c);
        }
        out.push_back(acc / (p * p));
      }
    }
    return out;
  };
  auto diff = [](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  };

  ShapeSpec sphere{ShapeClass::sphere, 1.0f, 1.0f, 0.0f, 13};
  PointCloud sc = generate_shape(sphere, 2048);
  double sphere_max_diff = 0.0;
  const auto first = patch_means(render_depth(sc, 0, 32, 32), 8);
  for (int v = 1; v < kNumViews; ++v) {
    sphere_max_diff = std::max(sphere_max_diff, diff(first, patch_means(render_depth(sc, v, 32, 32), 8)));
  }

  ShapeSpec cyl{ShapeClass::cylinder, 0.35f, 1.8f, 0.0f, 13};
  PointCloud cc = generate_shape(cyl, 2048);
  const double cyl_diff = diff(patch_means(render_depth(cc, 4, 32, 32), 8), patch_means(render_depth(cc, 0, 32, 32), 8));
  REQUIRE(cyl_diff > sphere_max_diff);
}

TEST_CASE("dataset generation is balanced, reproducible and round-trips") {
  const std::string dir = "/tmp/xbert_test_dataset";
  std::filesystem::remove_all(dir);
  DatasetParams params;
  params.count = 16;
  params.n_points = 96;
  params.master_seed = 404;
  write_dataset(dir, params);

  DatasetParams loaded = load_manifest(dir);
  REQUIRE(loaded.count == 16);
  REQUIRE(loaded.n_points == 96);
  REQUIRE(loaded.master_seed == 404);

  std::array<int, kNumShapeClasses> per_class{};
  for (int i = 0; i < params.count; ++i) {
    PairSample s = load_sample(dir, loaded, i);
    per_class[s.class_id]++;
    // Records match regeneration from (master seed, index) exactly.
    PairSample regen = generate_sample(params, i);
    REQUIRE(s.points_a.points == regen.points_a.points);
    REQUIRE(s.points_b.points == regen.points_b.points);
    REQUIRE(s.image_a.pixels == regen.image_a.pixels);
    REQUIRE(s.image_b.pixels == regen.image_b.pixels);
    REQUIRE(s.seed == regen.seed);
    for (float px : s.image_a.pixels) {
      REQUIRE(px >= 0.0f);
      REQUIRE(px <= 1.0f);
    }
  }
  for (int c : per_class) REQUIRE(c == 4);
  std::filesystem::remove_all(dir);
}
