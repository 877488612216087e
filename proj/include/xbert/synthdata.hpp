#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xbert/geometry.hpp"
#include "xbert/rng.hpp"

// Procedural stand-in for a CAD corpus: four parametric shape classes,
// point augmentation, orthographic depth renders and the on-disk dataset
// of paired samples.

namespace xbert {

enum class ShapeClass : uint32_t { sphere = 0, cube = 1, cylinder = 2, torus = 3 };
constexpr int kNumShapeClasses = 4;

inline const char* shape_class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::cube: return "cube";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::torus: return "torus";
  }
  return "unknown";
}

struct ShapeSpec {
  ShapeClass cls = ShapeClass::sphere;
  // sphere: a = radius; cube: a = edge length; cylinder: a = radius,
  // b = height; torus: a = ring radius, b = tube radius.
  float size_a = 1.0f;
  float size_b = 1.0f;
  float yaw = 0.0f;  // rotation about the z (up) axis
  uint64_t seed = 0;

  void validate() const {
    if (size_a <= 0.0f || size_b <= 0.0f) throw std::runtime_error("ShapeSpec: size parameters must be positive");
  }
};

struct RenderedImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // row-major, background exactly 0, 1 = closest
  int view = 0;

  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct PairSample {
  PointCloud points_a;       // P
  PointCloud points_b;       // P+
  RenderedImage image_a;     // I
  RenderedImage image_b;     // I+
  uint32_t class_id = 0;
  uint64_t seed = 0;
};

// ------------------------------------------------------------- shape sampling

// Uniform surface samples in canonical orientation (axis = z), before pose
// and normalization.
inline std::vector<Vec3> sample_surface(const ShapeSpec& spec, int n_points, Rng& rng) {
  spec.validate();
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(n_points));
  const double two_pi = 6.283185307179586;
  switch (spec.cls) {
    case ShapeClass::sphere: {
      const float r = spec.size_a;
      while (static_cast<int>(pts.size()) < n_points) {
        const float x = rng.normal_float(0, 1), y = rng.normal_float(0, 1), z = rng.normal_float(0, 1);
        const float norm = std::sqrt(x * x + y * y + z * z);
        if (norm < 1e-6f) continue;
        pts.push_back({r * x / norm, r * y / norm, r * z / norm});
      }
      break;
    }
    case ShapeClass::cube: {
      const float h = spec.size_a * 0.5f;
      for (int i = 0; i < n_points; ++i) {
        const int face = static_cast<int>(rng.uniform_int(6));
        const float u = rng.uniform_float(-h, h);
        const float v = rng.uniform_float(-h, h);
        const float s = (face % 2 == 0) ? h : -h;
        if (face / 2 == 0) {
          pts.push_back({s, u, v});
        } else if (face / 2 == 1) {
          pts.push_back({u, s, v});
        } else {
          pts.push_back({u, v, s});
        }
      }
      break;
    }
    case ShapeClass::cylinder: {
      const float r = spec.size_a, h = spec.size_b;
      const double side_area = two_pi * r * h;
      const double cap_area = two_pi * r * r;  // both caps
      const double p_side = side_area / (side_area + cap_area);
      for (int i = 0; i < n_points; ++i) {
        if (rng.uniform() < p_side) {
          const double theta = rng.uniform() * two_pi;
          const float z = rng.uniform_float(-h * 0.5f, h * 0.5f);
          pts.push_back({r * static_cast<float>(std::cos(theta)), r * static_cast<float>(std::sin(theta)), z});
        } else {
          const float z = rng.uniform_int(2) ? h * 0.5f : -h * 0.5f;
          const double theta = rng.uniform() * two_pi;
          const float rad = r * std::sqrt(static_cast<float>(rng.uniform()));
          pts.push_back({rad * static_cast<float>(std::cos(theta)), rad * static_cast<float>(std::sin(theta)), z});
        }
      }
      break;
    }
    case ShapeClass::torus: {
      const float ring = spec.size_a, tube = spec.size_b;
      while (static_cast<int>(pts.size()) < n_points) {
        const double u = rng.uniform() * two_pi;
        const double v = rng.uniform() * two_pi;
        // Rejection by the surface-area Jacobian keeps sampling uniform.
        const double accept = (ring + tube * std::cos(v)) / (ring + tube);
        if (rng.uniform() > accept) continue;
        const float rr = ring + tube * static_cast<float>(std::cos(v));
        pts.push_back({rr * static_cast<float>(std::cos(u)), rr * static_cast<float>(std::sin(u)),
                       tube * static_cast<float>(std::sin(v))});
      }
      break;
    }
    default:
      throw std::runtime_error("sample_surface: unknown shape class");
  }
  return pts;
}

inline void rotate_z(std::vector<Vec3>& pts, float angle) {
  const float c = std::cos(angle), s = std::sin(angle);
  for (auto& p : pts) {
    const float x = p[0], y = p[1];
    p[0] = c * x - s * y;
    p[1] = s * x + c * y;
  }
}

// Center on the centroid and scale so max |p| == 1.
inline void normalize_to_unit_sphere(std::vector<Vec3>& pts) {
  Vec3 mean{0, 0, 0};
  for (const auto& p : pts) {
    for (int d = 0; d < 3; ++d) mean[static_cast<size_t>(d)] += p[static_cast<size_t>(d)];
  }
  for (int d = 0; d < 3; ++d) mean[static_cast<size_t>(d)] /= static_cast<float>(pts.size());
  float max_norm = 0.0f;
  for (auto& p : pts) {
    for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] -= mean[static_cast<size_t>(d)];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  if (max_norm > 0.0f) {
    for (auto& p : pts) {
      for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] /= max_norm;
    }
  }
}

inline PointCloud generate_shape(const ShapeSpec& spec, int n_points) {
  if (n_points < 64) throw std::runtime_error("generate_shape: need at least 64 points");
  Rng rng(spec.seed);
  PointCloud cloud;
  cloud.points = sample_surface(spec, n_points, rng);
  rotate_z(cloud.points, spec.yaw);
  normalize_to_unit_sphere(cloud.points);
  cloud.label = static_cast<int>(spec.cls);
  return cloud;
}

// Randomized size parameters per class; absolute scale cancels in the unit
// normalization, the intrinsic ratios carry the class signal.
inline ShapeSpec random_spec(ShapeClass cls, Rng& rng) {
  ShapeSpec spec;
  spec.cls = cls;
  switch (cls) {
    case ShapeClass::sphere:
      spec.size_a = rng.uniform_float(0.5f, 1.0f);
      spec.size_b = 1.0f;
      break;
    case ShapeClass::cube:
      spec.size_a = rng.uniform_float(0.7f, 1.4f);
      spec.size_b = 1.0f;
      break;
    case ShapeClass::cylinder:
      spec.size_a = rng.uniform_float(0.25f, 0.5f);
      spec.size_b = rng.uniform_float(1.2f, 2.2f);
      break;
    case ShapeClass::torus:
      spec.size_a = rng.uniform_float(0.6f, 1.0f);
      spec.size_b = rng.uniform_float(0.15f, 0.3f);
      break;
  }
  spec.yaw = rng.uniform_float(0.0f, 6.2831853f);
  spec.seed = rng.next_u64();
  return spec;
}

// ------------------------------------------------------------- augmentation

struct PointAugment {
  float scale_min = 0.8f;
  float scale_max = 1.2f;
  bool rotate = true;
  float jitter_sigma = 0.01f;
  float jitter_clip = 0.05f;

  static PointAugment identity() { return {1.0f, 1.0f, false, 0.0f, 0.0f}; }
};

inline PointCloud augment_points(const PointCloud& cloud, const PointAugment& aug, Rng& rng) {
  if (cloud.points.empty()) throw std::runtime_error("augment_points: empty cloud");
  PointCloud out = cloud;
  const float s = rng.uniform_float(aug.scale_min, aug.scale_max);
  for (auto& p : out.points) {
    for (int d = 0; d < 3; ++d) p[static_cast<size_t>(d)] *= s;
  }
  if (aug.rotate) rotate_z(out.points, rng.uniform_float(0.0f, 6.2831853f));
  if (aug.jitter_sigma > 0.0f) {
    for (auto& p : out.points) {
      for (int d = 0; d < 3; ++d) {
        const float j = std::clamp(rng.normal_float(0.0f, aug.jitter_sigma), -aug.jitter_clip, aug.jitter_clip);
        p[static_cast<size_t>(d)] += j;
      }
    }
  }
  return out;
}

// ------------------------------------------------------------- depth render

constexpr int kNumViews = 6;  // axis-aligned: +x -x +y -y +z -z

namespace detail {
struct ViewBasis {
  Vec3 dir, right, up;
};
inline ViewBasis view_basis(int view) {
  switch (view) {
    case 0: return {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    case 1: return {{-1, 0, 0}, {0, -1, 0}, {0, 0, 1}};
    case 2: return {{0, 1, 0}, {-1, 0, 0}, {0, 0, 1}};
    case 3: return {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}};
    case 4: return {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}};
    case 5: return {{0, 0, -1}, {-1, 0, 0}, {0, 1, 0}};
    default: throw std::runtime_error("view_basis: view must be in [0,6)");
  }
}
inline float dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
}  // namespace detail

// Orthographic splat along one axis view. Each pixel keeps the nearest
// point's depth, mapped so 1 is closest to the camera and empty pixels
// stay exactly 0. Input is expected inside the unit sphere; coordinates
// are clamped to the frustum either way.
inline RenderedImage render_depth(const PointCloud& cloud, int view, int height, int width,
                                  int image_patch = 8) {
  if (height % image_patch != 0 || width % image_patch != 0) {
    throw std::runtime_error("render_depth: image size " + std::to_string(height) + "x" +
                             std::to_string(width) + " not divisible by patch size " +
                             std::to_string(image_patch));
  }
  const auto basis = detail::view_basis(view);
  RenderedImage img;
  img.height = height;
  img.width = width;
  img.view = view;
  img.pixels.assign(static_cast<size_t>(height) * width, 0.0f);
  for (const auto& p : cloud.points) {
    const float u = std::clamp(detail::dot3(p, basis.right), -1.0f, 1.0f);
    const float v = std::clamp(detail::dot3(p, basis.up), -1.0f, 1.0f);
    const float depth = std::clamp((detail::dot3(p, basis.dir) + 1.0f) * 0.5f, 0.0f, 1.0f);
    const int col = std::min(width - 1, static_cast<int>((u + 1.0f) * 0.5f * static_cast<float>(width)));
    const int row = std::min(height - 1, static_cast<int>((1.0f - v) * 0.5f * static_cast<float>(height)));
    img.at(row, col) = std::max(img.at(row, col), depth);
  }
  return img;
}

struct ImageAugment {
  float crop_min = 0.9f;  // per-side fraction; >= 0.81 of the area survives
  float brightness_min = 0.8f;
  float brightness_max = 1.2f;
};

// Deterministic core: crop to (crop_h, crop_w) at (y0, x0), resize back by
// nearest neighbor, then scale nonzero pixels by b clamped to [0,1].
inline RenderedImage crop_resize_brighten(const RenderedImage& img, int crop_h, int crop_w, int y0, int x0,
                                          float b) {
  if (crop_h < 1 || crop_w < 1 || y0 < 0 || x0 < 0 || y0 + crop_h > img.height || x0 + crop_w > img.width) {
    throw std::runtime_error("crop_resize_brighten: crop window out of bounds");
  }
  RenderedImage out;
  out.height = img.height;
  out.width = img.width;
  out.view = img.view;
  out.pixels.assign(img.pixels.size(), 0.0f);
  for (int r = 0; r < img.height; ++r) {
    const int sr = y0 + std::min(crop_h - 1, r * crop_h / img.height);
    for (int c = 0; c < img.width; ++c) {
      const int sc = x0 + std::min(crop_w - 1, c * crop_w / img.width);
      float v = img.at(sr, sc);
      if (v != 0.0f) v = std::clamp(v * b, 0.0f, 1.0f);
      out.at(r, c) = v;
    }
  }
  return out;
}

inline RenderedImage augment_image(const RenderedImage& img, const ImageAugment& aug, Rng& rng) {
  const int crop_h = std::max(1, static_cast<int>(std::lround(static_cast<float>(img.height) *
                                                              rng.uniform_float(aug.crop_min, 1.0f))));
  const int crop_w = std::max(1, static_cast<int>(std::lround(static_cast<float>(img.width) *
                                                              rng.uniform_float(aug.crop_min, 1.0f))));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.height - crop_h + 1)));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.width - crop_w + 1)));
  const float b = rng.uniform_float(aug.brightness_min, aug.brightness_max);
  return crop_resize_brighten(img, crop_h, crop_w, y0, x0, b);
}

// ------------------------------------------------------------- pair samples

inline PairSample make_pair_sample(const ShapeSpec& spec, int n_points, int height, int width,
                                   int image_patch, Rng& rng) {
  PairSample sample;
  const PointCloud base = generate_shape(spec, n_points);
  const PointAugment point_aug;
  const ImageAugment image_aug;
  sample.points_a = augment_points(base, point_aug, rng);
  sample.points_b = augment_points(base, point_aug, rng);
  const int view_a = static_cast<int>(rng.uniform_int(kNumViews));
  const int view_b = (view_a + 1 + static_cast<int>(rng.uniform_int(kNumViews - 1))) % kNumViews;
  sample.image_a = augment_image(render_depth(base, view_a, height, width, image_patch), image_aug, rng);
  sample.image_b = augment_image(render_depth(base, view_b, height, width, image_patch), image_aug, rng);
  sample.class_id = static_cast<uint32_t>(spec.cls);
  sample.seed = spec.seed;
  return sample;
}

// ------------------------------------------------------------- dataset io

struct DatasetParams {
  int count = 256;
  int n_points = 256;
  int height = 32;
  int width = 32;
  int image_patch = 8;
  uint64_t master_seed = 42;
};

// Every sample derives its stream from (master seed, index), so generation
// is reproducible regardless of ordering or parallelism.
inline PairSample generate_sample(const DatasetParams& params, int index) {
  Rng rng = Rng::derive(params.master_seed, static_cast<uint64_t>(index));
  const auto cls = static_cast<ShapeClass>(index % kNumShapeClasses);
  ShapeSpec spec = random_spec(cls, rng);
  return make_pair_sample(spec, params.n_points, params.height, params.width, params.image_patch, rng);
}

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
inline uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

inline std::string record_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d.bin", index);
  return buf;
}

inline void write_cloud(std::ostream& out, const PointCloud& c) {
  out.write(reinterpret_cast<const char*>(c.points.data()),
            static_cast<std::streamsize>(c.points.size() * sizeof(Vec3)));
}

inline void write_image(std::ostream& out, const RenderedImage& img) {
  write_u32(out, static_cast<uint32_t>(img.view));
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
}

}  // namespace detail

inline void write_sample_record(const std::string& path, const PairSample& s, const DatasetParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_sample_record: cannot open '" + path + "'");
  detail::write_u32(out, static_cast<uint32_t>(params.n_points));
  detail::write_u32(out, static_cast<uint32_t>(params.height));
  detail::write_u32(out, static_cast<uint32_t>(params.width));
  detail::write_u32(out, s.class_id);
  detail::write_u64(out, s.seed);
  detail::write_cloud(out, s.points_a);
  detail::write_cloud(out, s.points_b);
  detail::write_image(out, s.image_a);
  detail::write_image(out, s.image_b);
}

inline PairSample read_sample_record(const std::string& path, const DatasetParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_sample_record: cannot open '" + path + "'");
  const auto n = detail::read_u32(in);
  const auto h = detail::read_u32(in);
  const auto w = detail::read_u32(in);
  if (n != static_cast<uint32_t>(params.n_points) || h != static_cast<uint32_t>(params.height) ||
      w != static_cast<uint32_t>(params.width)) {
    throw std::runtime_error("read_sample_record: '" + path + "' does not match the manifest shapes");
  }
  PairSample s;
  s.class_id = detail::read_u32(in);
  s.seed = detail::read_u64(in);
  auto read_cloud = [&](PointCloud& c) {
    c.points.resize(n);
    in.read(reinterpret_cast<char*>(c.points.data()), static_cast<std::streamsize>(n * sizeof(Vec3)));
    c.label = static_cast<int>(s.class_id);
  };
  auto read_image = [&](RenderedImage& img) {
    img.height = static_cast<int>(h);
    img.width = static_cast<int>(w);
    img.view = static_cast<int>(detail::read_u32(in));
    img.pixels.resize(static_cast<size_t>(h) * w);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  };
  read_cloud(s.points_a);
  read_cloud(s.points_b);
  read_image(s.image_a);
  read_image(s.image_b);
  if (!in) throw std::runtime_error("read_sample_record: short read on '" + path + "'");
  return s;
}

inline void write_dataset(const std::string& dir, const DatasetParams& params) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int i = 0; i < params.count; ++i) {
    const PairSample s = generate_sample(params, i);
    write_sample_record(dir + "/" + detail::record_name(i), s, params);
  }
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["count"] = params.count;
  manifest["n_points"] = params.n_points;
  manifest["height"] = params.height;
  manifest["width"] = params.width;
  manifest["image_patch"] = params.image_patch;
  manifest["classes"] = kNumShapeClasses;
  manifest["master_seed"] = params.master_seed;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("write_dataset: cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << "\n";
}

inline DatasetParams load_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("load_manifest: no manifest.json in '" + dir + "'");
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format_version", 0) != 1) {
    throw std::runtime_error("load_manifest: unsupported dataset format version");
  }
  DatasetParams params;
  params.count = manifest.at("count").get<int>();
  params.n_points = manifest.at("n_points").get<int>();
  params.height = manifest.at("height").get<int>();
  params.width = manifest.at("width").get<int>();
  params.image_patch = manifest.at("image_patch").get<int>();
  params.master_seed = manifest.at("master_seed").get<uint64_t>();
  return params;
}

inline PairSample load_sample(const std::string& dir, const DatasetParams& params, int index) {
  if (index < 0 || index >= params.count) throw std::runtime_error("load_sample: index out of range");
  return read_sample_record(dir + "/" + detail::record_name(index), params);
}

}  // namespace xbert
