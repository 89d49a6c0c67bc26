#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "omniseg/scenedata.hpp"

namespace omniseg::scenedata {

Augment2DParams draw_augment_2d(std::uint64_t seed, int height, int width, double min_scale,
                                double max_scale, double color_jitter) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(min_scale, max_scale);
  std::uniform_real_distribution<double> jitter(-color_jitter, color_jitter);
  Augment2DParams p;
  p.scale = scale(rng);
  p.brightness = jitter(rng);
  p.contrast = jitter(rng);
  const int new_h = static_cast<int>(std::lround(height * p.scale));
  const int new_w = static_cast<int>(std::lround(width * p.scale));
  p.crop_y = new_h > height ? std::uniform_int_distribution<int>(0, new_h - height)(rng) : 0;
  p.crop_x = new_w > width ? std::uniform_int_distribution<int>(0, new_w - width)(rng) : 0;
  return p;
}

Frame augment_2d(const Frame& frame, const Augment2DParams& p) {
  require(p.scale > 0.0, "augment_2d: scale must be positive");
  const int h = frame.height();
  const int w = frame.width();
  const int new_h = std::max(1, static_cast<int>(std::lround(h * p.scale)));
  const int new_w = std::max(1, static_cast<int>(std::lround(w * p.scale)));
  // per-axis factors realized after rounding the resized size
  const double sy = static_cast<double>(new_h) / h;
  const double sx = static_cast<double>(new_w) / w;

  Frame out;
  out.pose = frame.pose;
  out.intrinsics = frame.intrinsics;
  out.intrinsics.fx *= sx;
  out.intrinsics.fy *= sy;
  out.intrinsics.cx = (frame.intrinsics.cx + 0.5) * sx - 0.5 - p.crop_x;
  out.intrinsics.cy = (frame.intrinsics.cy + 0.5) * sy - 0.5 - p.crop_y;
  out.depth = DepthMap(h, w);
  out.rgb.height = h;
  out.rgb.width = w;
  out.rgb.data.assign(static_cast<size_t>(h) * w * 3, 0);
  out.gt_instance.assign(static_cast<size_t>(h) * w, kIgnoreLabel);

  const bool identity_color = p.brightness == 0.0 && p.contrast == 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int ry = y + p.crop_y;  // row in the resized image
      const int rx = x + p.crop_x;
      if (ry >= new_h || rx >= new_w) continue;  // padding
      const size_t o = static_cast<size_t>(y) * w + x;
      const int ny = std::min(h - 1, static_cast<int>(std::floor((ry + 0.5) / sy)));
      const int nx = std::min(w - 1, static_cast<int>(std::floor((rx + 0.5) / sx)));
      out.depth.at(y, x) = frame.depth.at(ny, nx);
      out.gt_instance[o] = frame.instance_at(ny, nx);
      const double u = (rx + 0.5) / sx - 0.5;
      const double v = (ry + 0.5) / sy - 0.5;
      const auto taps = geometry::bilinear_taps(h, w, u, v);
      for (int c = 0; c < 3; ++c) {
        double value = 0.0;
        for (int t = 0; t < 4; ++t) value += taps.weight[t] * frame.rgb.data[static_cast<size_t>(taps.index[t]) * 3 + c];
        if (!identity_color) {
          value = ((value / 255.0 - 0.5) * (1.0 + p.contrast) + 0.5 + p.brightness) * 255.0;
        }
        out.rgb.data[o * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
  }
  return out;
}

Frame augment_2d(const Frame& frame, std::uint64_t seed) {
  return augment_2d(frame, draw_augment_2d(seed, frame.height(), frame.width()));
}

Augment3DParams draw_augment_3d(std::uint64_t seed, double min_scale, double max_scale, double jitter_sigma) {
  std::mt19937_64 rng(seed);
  Augment3DParams p;
  p.rotation = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  p.scale = std::uniform_real_distribution<double>(min_scale, max_scale)(rng);
  p.jitter_sigma = jitter_sigma;
  p.jitter_seed = rng();
  return p;
}

std::vector<Vec3> augment_3d(std::span<const Vec3> positions, const Augment3DParams& p) {
  const Mat3 rot = Eigen::AngleAxisd(p.rotation, Vec3::UnitY()).toRotationMatrix();
  std::mt19937_64 rng(p.jitter_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Vec3> out;
  out.reserve(positions.size());
  for (const Vec3& x : positions) {
    Vec3 y = p.scale * (rot * x);
    if (p.jitter_sigma > 0.0) y += p.jitter_sigma * Vec3(noise(rng), noise(rng), noise(rng));
    out.push_back(y);
  }
  return out;
}

std::vector<Vec3> augment_3d(std::span<const Vec3> positions, std::uint64_t seed) {
  return augment_3d(positions, draw_augment_3d(seed));
}

}  // namespace omniseg::scenedata
