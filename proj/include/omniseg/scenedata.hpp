#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "omniseg/common.hpp"
#include "omniseg/geometry.hpp"

// Procedural posed RGB-D scenes: a box-shaped room with cuboids and spheres
// on the floor, observed by a ring of cameras and rendered by ray casting.
namespace omniseg::scenedata {

using geometry::CameraIntrinsics;
using geometry::CameraPose;
using geometry::DepthMap;

/// GT value for pixels that carry no label (padding introduced by augmentation).
inline constexpr int kIgnoreLabel = 65535;
inline constexpr int kBackgroundClass = 0;

enum class Shape { Cuboid, Sphere };

struct SceneObject {
  Shape shape = Shape::Cuboid;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // full extents; for spheres size.x() is the radius
  Vec3 albedo = Vec3::Constant(0.5);
  int class_id = 1;
  int instance_id = 1;

  double radius() const { return size.x(); }
};

struct VocabEntry {
  int class_id = 0;
  std::string name;
  bool operator==(const VocabEntry&) const = default;
};

struct Vocabulary {
  std::vector<VocabEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  const std::string& name(int class_id) const { return entries.at(class_id).name; }
  void validate() const;
  bool operator==(const Vocabulary&) const = default;

  /// Class 0 is the room shell; classes 1..4 are objects.
  static Vocabulary standard();
};

/// Appearance of an object class.
struct ClassStyle {
  Shape shape = Shape::Cuboid;
  Vec3 albedo = Vec3::Constant(0.5);
};

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // H * W * 3

  double channel(int row, int col, int c) const {
    return data[(static_cast<size_t>(row) * width + col) * 3 + c] / 255.0;
  }
  bool operator==(const RgbImage&) const = default;
};

struct Frame {
  CameraIntrinsics intrinsics;
  CameraPose pose;
  RgbImage rgb;
  DepthMap depth;
  std::vector<int> gt_instance;  // H * W; 0 = background

  int height() const { return depth.height(); }
  int width() const { return depth.width(); }
  int instance_at(int row, int col) const { return gt_instance[static_cast<size_t>(row) * width() + col]; }
};

struct InstanceLabel {
  int instance_id = 0;
  int class_id = 0;
  bool operator==(const InstanceLabel&) const = default;
};

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  int instance_id = 0;
  int class_id = 0;
};

struct Scene {
  std::vector<Frame> frames;
  std::vector<InstanceLabel> instances;
  std::vector<SurfacePoint> surface;
  Vocabulary vocabulary;
  std::vector<SceneObject> objects;  // generator geometry; not persisted

  int class_of(int instance_id) const;
  /// Throws ContractViolation on any broken invariant.
  void validate() const;
};

struct SceneConfig {
  Vec3 room_size{4.0, 3.0, 4.0};  // x, y (height), z
  int min_objects = 3;
  int max_objects = 6;
  double min_object_size = 0.3;
  double max_object_size = 1.0;
  int views = 4;
  int width = 64;
  int height = 64;
  double fov_degrees = 80.0;
  double ring_radius = 1.6;
  double camera_height = 1.5;
  double look_height = 0.4;
  double angle_jitter = 0.08;     // radians
  double position_jitter = 0.05;  // meters
  int samples_per_object = 512;
  int room_samples = 2048;
  double albedo_jitter = 0.04;
  /// Side length of a floor-to-ceiling background pillar at the room center (0 = none).
  double pillar_size = 0.0;
  /// Forces at least one pair of objects to share a class.
  bool duplicate_class = false;
  /// Every object must cover at least this many pixels in some frame.
  int min_visible_pixels = 16;
  int query_budget = 20;
  Vocabulary vocabulary = Vocabulary::standard();
  std::vector<ClassStyle> styles;  // per object class 1..K; empty = standard styles

  void validate() const;
};

std::vector<ClassStyle> standard_styles();

/// Deterministic in (seed, config). Throws GenerationError when object
/// placement fails after 10,000 attempts.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Renders one frame of `objects` inside the room described by `config`.
Frame render_frame(const SceneConfig& config, const std::vector<SceneObject>& objects,
                   const CameraIntrinsics& intrinsics, const CameraPose& pose);

CameraIntrinsics make_intrinsics(const SceneConfig& config);

/// Zeroes depth at a `hole_rate` fraction of pixels adjacent to an instance boundary.
Scene simulate_depth_holes(const Scene& scene, double hole_rate, std::uint64_t seed);

/// Writes the scene directory layout; throws std::runtime_error on I/O failure.
void save_scene(const Scene& scene, const std::filesystem::path& directory);
/// Throws LoadError naming the offending file.
Scene load_scene(const std::filesystem::path& directory);

struct Augment2DParams {
  double scale = 1.0;
  double brightness = 0.0;
  double contrast = 0.0;
  int crop_x = 0;  // crop offset into the resized image when it is larger
  int crop_y = 0;
};

Augment2DParams draw_augment_2d(std::uint64_t seed, int height, int width, double min_scale = 0.1,
                                double max_scale = 2.0, double color_jitter = 0.2);
Frame augment_2d(const Frame& frame, const Augment2DParams& params);
Frame augment_2d(const Frame& frame, std::uint64_t seed);

struct Augment3DParams {
  double rotation = 0.0;  // radians about the vertical axis
  double scale = 1.0;
  double jitter_sigma = 0.0;
  std::uint64_t jitter_seed = 0;
};

Augment3DParams draw_augment_3d(std::uint64_t seed, double min_scale = 0.9, double max_scale = 1.1,
                                double jitter_sigma = 0.005);
std::vector<Vec3> augment_3d(std::span<const Vec3> positions, const Augment3DParams& params);
std::vector<Vec3> augment_3d(std::span<const Vec3> positions, std::uint64_t seed);

/// Frame window for one training sample.
std::vector<int> sample_training_frames(int frame_count, int n, std::uint64_t seed);

}  // namespace omniseg::scenedata
