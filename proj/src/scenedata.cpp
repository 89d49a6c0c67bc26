#include "omniseg/scenedata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include <Eigen/Geometry>

namespace omniseg::scenedata {

void Vocabulary::validate() const {
  require(!entries.empty(), "vocabulary: empty");
  for (int i = 0; i < size(); ++i) {
    require(entries[i].class_id == i, "vocabulary: class ids must be dense from 0");
    require(!entries[i].name.empty(), "vocabulary: empty class name");
  }
}

Vocabulary Vocabulary::standard() {
  return Vocabulary{{{0, "background"},
                     {1, "red box"},
                     {2, "blue ball"},
                     {3, "green storage crate"},
                     {4, "yellow beach ball"}}};
}

std::vector<ClassStyle> standard_styles() {
  return {{Shape::Cuboid, Vec3(0.85, 0.15, 0.12)},
          {Shape::Sphere, Vec3(0.15, 0.25, 0.85)},
          {Shape::Cuboid, Vec3(0.15, 0.72, 0.22)},
          {Shape::Sphere, Vec3(0.90, 0.80, 0.15)}};
}

int Scene::class_of(int instance_id) const {
  if (instance_id == 0) return kBackgroundClass;
  for (const auto& label : instances) {
    if (label.instance_id == instance_id) return label.class_id;
  }
  throw ContractViolation("scene: unknown instance id " + std::to_string(instance_id));
}

void Scene::validate() const {
  vocabulary.validate();
  std::set<int> ids;
  for (const auto& label : instances) {
    require(label.instance_id >= 1 && label.instance_id < kIgnoreLabel, "scene: instance id out of range");
    require(ids.insert(label.instance_id).second, "scene: duplicate instance id");
    require(label.class_id >= 1 && label.class_id < vocabulary.size(),
            "scene: unknown class id " + std::to_string(label.class_id));
  }
  for (const Frame& f : frames) {
    f.intrinsics.validate();
    f.pose.validate();
    f.depth.validate();
    require(f.depth.width() == f.intrinsics.width && f.depth.height() == f.intrinsics.height,
            "scene: depth size does not match intrinsics");
    require(f.rgb.width == f.width() && f.rgb.height == f.height() &&
                f.rgb.data.size() == static_cast<size_t>(f.width()) * f.height() * 3,
            "scene: rgb size mismatch");
    require(f.gt_instance.size() == static_cast<size_t>(f.width()) * f.height(),
            "scene: instance map size mismatch");
    for (int id : f.gt_instance) {
      require(id == 0 || id == kIgnoreLabel || ids.count(id), "scene: instance map holds unknown id " + std::to_string(id));
    }
  }
  for (const SurfacePoint& p : surface) {
    require(p.position.allFinite(), "scene: non-finite surface point");
    require(p.class_id >= 0 && p.class_id < vocabulary.size(), "scene: surface class out of range");
    if (p.instance_id != 0) {
      require(ids.count(p.instance_id), "scene: surface point with unknown instance");
      require(class_of(p.instance_id) == p.class_id, "scene: surface class disagrees with labels");
    }
  }
}

void SceneConfig::validate() const {
  require(room_size.minCoeff() > 0.0, "scene config: room size must be positive");
  require(min_objects >= 0 && min_objects <= max_objects, "scene config: bad object count range");
  require(max_objects <= query_budget, "scene config: object count exceeds query budget");
  require(min_object_size > 0.0 && min_object_size <= max_object_size, "scene config: bad object sizes");
  require(views >= 1, "scene config: need at least one view");
  require(width >= 1 && height >= 1, "scene config: bad image size");
  require(fov_degrees > 0.0 && fov_degrees < 180.0, "scene config: bad field of view");
  require(ring_radius > 0.0 && camera_height > 0.0 && camera_height < room_size.y(),
          "scene config: cameras must be inside the room");
  require(2 * ring_radius < std::min(room_size.x(), room_size.z()), "scene config: camera ring exceeds room");
  vocabulary.validate();
  const size_t n_styles = styles.empty() ? standard_styles().size() : styles.size();
  require(static_cast<int>(n_styles) == vocabulary.size() - 1,
          "scene config: need one style per object class");
  require(!duplicate_class || max_objects >= 2, "scene config: duplicate_class needs two objects");
}

CameraIntrinsics make_intrinsics(const SceneConfig& config) {
  CameraIntrinsics intr;
  const double half = std::tan(config.fov_degrees * std::numbers::pi / 360.0);
  intr.fx = 0.5 * config.width / half;
  intr.fy = intr.fx;
  intr.cx = 0.5 * (config.width - 1);
  intr.cy = 0.5 * (config.height - 1);
  intr.width = config.width;
  intr.height = config.height;
  return intr;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  Vec3 albedo = Vec3::Zero();
  int instance = 0;
};

const Vec3 kFloorAlbedo(0.55, 0.50, 0.45);
const Vec3 kWallAlbedo(0.68, 0.68, 0.70);
const Vec3 kCeilingAlbedo(0.80, 0.80, 0.80);
const Vec3 kPillarAlbedo(0.60, 0.58, 0.62);

Vec3 light_direction() { return Vec3(0.4, 1.0, 0.3).normalized(); }

// Entry intersection with an axis-aligned box; false when missed or behind.
bool intersect_box(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi, double& t, Vec3& normal) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - o[a]) / d[a];
    double t1 = (hi[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      axis = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (axis < 0 || t_near > t_far || t_near <= 1e-9) return false;
  t = t_near;
  normal = Vec3::Zero();
  normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
  return true;
}

bool intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r, double& t, Vec3& normal) {
  const Vec3 oc = o - c;
  const double a = d.squaredNorm();
  const double b = 2.0 * d.dot(oc);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - 4 * a * cc;
  if (disc < 0) return false;
  const double root = (-b - std::sqrt(disc)) / (2 * a);
  if (root <= 1e-9) return false;
  t = root;
  normal = (o + root * d - c).normalized();
  return true;
}

Vec3 room_lo(const SceneConfig& cfg) { return Vec3(-cfg.room_size.x() / 2, 0.0, -cfg.room_size.z() / 2); }
Vec3 room_hi(const SceneConfig& cfg) { return Vec3(cfg.room_size.x() / 2, cfg.room_size.y(), cfg.room_size.z() / 2); }

Hit cast_ray(const SceneConfig& cfg, const std::vector<SceneObject>& objects, const Vec3& o, const Vec3& d) {
  Hit hit;
  // room shell seen from inside: the exit face
  const Vec3 lo = room_lo(cfg);
  const Vec3 hi = room_hi(cfg);
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) continue;
    const double bound = d[a] > 0 ? hi[a] : lo[a];
    const double t = (bound - o[a]) / d[a];
    if (t > 1e-9 && t < hit.t) {
      hit.t = t;
      hit.normal = Vec3::Zero();
      hit.normal[a] = d[a] > 0 ? -1.0 : 1.0;
      hit.albedo = a == 1 ? (d[a] > 0 ? kCeilingAlbedo : kFloorAlbedo) : kWallAlbedo;
      hit.instance = 0;
    }
  }
  double t;
  Vec3 normal;
  if (cfg.pillar_size > 0.0) {
    const Vec3 half(cfg.pillar_size / 2, 0.0, cfg.pillar_size / 2);
    if (intersect_box(o, d, Vec3(-half.x(), 0.0, -half.z()), Vec3(half.x(), cfg.room_size.y(), half.z()), t,
                      normal) &&
        t < hit.t) {
      hit = {t, normal, kPillarAlbedo, 0};
    }
  }
  for (const SceneObject& obj : objects) {
    bool ok;
    if (obj.shape == Shape::Sphere) {
      ok = intersect_sphere(o, d, obj.center, obj.radius(), t, normal);
    } else {
      ok = intersect_box(o, d, obj.center - obj.size / 2, obj.center + obj.size / 2, t, normal);
    }
    if (ok && t < hit.t) hit = {t, normal, obj.albedo, obj.instance_id};
  }
  return hit;
}

double footprint_radius(const SceneObject& obj) {
  if (obj.shape == Shape::Sphere) return obj.radius();
  return 0.5 * std::hypot(obj.size.x(), obj.size.z());
}

std::vector<CameraPose> ring_poses(const SceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<CameraPose> poses;
  for (int v = 0; v < cfg.views; ++v) {
    const double angle = 2.0 * std::numbers::pi * v / cfg.views + cfg.angle_jitter * unit(rng);
    Vec3 eye(cfg.ring_radius * std::cos(angle), cfg.camera_height, cfg.ring_radius * std::sin(angle));
    eye += cfg.position_jitter * Vec3(unit(rng), unit(rng), unit(rng));
    Vec3 target(0.0, cfg.look_height, 0.0);
    target += cfg.position_jitter * Vec3(unit(rng), unit(rng), unit(rng));
    poses.push_back(CameraPose::look_at(eye, target, Vec3::UnitY()));
  }
  return poses;
}

std::vector<SceneObject> place_objects(const SceneConfig& cfg, std::mt19937_64& rng, int& attempts) {
  const auto styles = cfg.styles.empty() ? standard_styles() : cfg.styles;
  const int n_classes = static_cast<int>(styles.size());
  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> class_dist(1, n_classes);
  std::uniform_real_distribution<double> size_dist(cfg.min_object_size, cfg.max_object_size);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  int count = count_dist(rng);
  if (cfg.duplicate_class) count = std::max(count, 2);
  std::vector<int> classes(count);
  for (int& c : classes) c = class_dist(rng);
  if (cfg.duplicate_class) classes[1] = classes[0];

  // a crowded partial layout can leave no room for the next object; start over then
  while (true) {
    std::vector<SceneObject> objects;
    bool stuck = false;
    for (int i = 0; i < count && !stuck; ++i) {
      SceneObject obj;
      obj.class_id = classes[i];
      obj.instance_id = i + 1;
      const ClassStyle& style = styles[classes[i] - 1];
      obj.shape = style.shape;
      obj.albedo = (style.albedo + cfg.albedo_jitter * Vec3(unit(rng), unit(rng), unit(rng)))
                       .cwiseMax(0.0)
                       .cwiseMin(1.0);
      for (int tries = 0;; ++tries) {
        if (++attempts > 10000) {
          throw GenerationError("generate_scene: object placement failed after 10000 attempts");
        }
        if (tries == 200) {
          stuck = true;
          break;
        }
        if (obj.shape == Shape::Sphere) {
          const double r = size_dist(rng) / 2;
          obj.size = Vec3(r, r, r);
          obj.center.y() = r;
        } else {
          obj.size = Vec3(size_dist(rng), size_dist(rng), size_dist(rng));
          obj.center.y() = obj.size.y() / 2;
        }
        const double rb = footprint_radius(obj);
        const double rho_max = cfg.ring_radius - 0.25 - rb;
        const double rho_min = cfg.pillar_size > 0 ? cfg.pillar_size / std::sqrt(2.0) + rb + 0.05 : 0.0;
        if (rho_max <= rho_min) continue;
        obj.center.x() = rho_max * unit(rng);
        obj.center.z() = rho_max * unit(rng);
        const double rho = std::hypot(obj.center.x(), obj.center.z());
        if (rho > rho_max || rho < rho_min) continue;
        if (std::abs(obj.center.x()) + rb > cfg.room_size.x() / 2 ||
            std::abs(obj.center.z()) + rb > cfg.room_size.z() / 2)
          continue;
        bool clear = true;
        for (const SceneObject& other : objects) {
          const double gap = std::hypot(obj.center.x() - other.center.x(), obj.center.z() - other.center.z());
          if (gap < rb + footprint_radius(other) + 0.05) {
            clear = false;
            break;
          }
        }
        if (clear) break;
      }
      if (!stuck) objects.push_back(obj);
    }
    if (!stuck) return objects;
  }
}

Vec3 sample_unit_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  while (true) {
    Vec3 v(n(rng), n(rng), n(rng));
    if (v.norm() > 1e-9) return v.normalized();
  }
}

// Uniform samples over the faces of a box, optionally skipping the bottom face.
void sample_box_surface(const Vec3& lo, const Vec3& hi, int count, std::mt19937_64& rng,
                        std::vector<Vec3>& out) {
  const Vec3 e = hi - lo;
  const double areas[6] = {e.y() * e.z(), e.y() * e.z(), e.x() * e.z(), e.x() * e.z(), e.x() * e.y(), e.x() * e.y()};
  std::discrete_distribution<int> face(std::begin(areas), std::end(areas));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const int f = face(rng);
    Vec3 p(lo.x() + u01(rng) * e.x(), lo.y() + u01(rng) * e.y(), lo.z() + u01(rng) * e.z());
    const int axis = f / 2;
    p[axis] = (f % 2 == 0) ? lo[axis] : hi[axis];
    out.push_back(p);
  }
}

std::vector<SurfacePoint> sample_surface(const SceneConfig& cfg, const std::vector<SceneObject>& objects,
                                         std::mt19937_64& rng) {
  std::vector<SurfacePoint> surface;
  for (const SceneObject& obj : objects) {
    std::vector<Vec3> pts;
    if (obj.shape == Shape::Sphere) {
      for (int i = 0; i < cfg.samples_per_object; ++i) pts.push_back(obj.center + obj.radius() * sample_unit_sphere(rng));
    } else {
      sample_box_surface(obj.center - obj.size / 2, obj.center + obj.size / 2, cfg.samples_per_object, rng, pts);
    }
    for (const Vec3& p : pts) surface.push_back({p, obj.instance_id, obj.class_id});
  }
  std::vector<Vec3> shell;
  if (cfg.pillar_size > 0.0) {
    // split the shell budget between room and pillar by area
    const Vec3 e = cfg.room_size;
    const double room_area = 2 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
    const double pillar_area = 4 * cfg.pillar_size * e.y();
    const int n_pillar = static_cast<int>(std::lround(cfg.room_samples * pillar_area / (room_area + pillar_area)));
    sample_box_surface(room_lo(cfg), room_hi(cfg), cfg.room_samples - n_pillar, rng, shell);
    const Vec3 half(cfg.pillar_size / 2, 0.0, cfg.pillar_size / 2);
    sample_box_surface(Vec3(-half.x(), 0.0, -half.z()), Vec3(half.x(), e.y(), half.z()), n_pillar, rng, shell);
  } else {
    sample_box_surface(room_lo(cfg), room_hi(cfg), cfg.room_samples, rng, shell);
  }
  for (const Vec3& p : shell) surface.push_back({p, 0, kBackgroundClass});
  return surface;
}

}  // namespace

Frame render_frame(const SceneConfig& cfg, const std::vector<SceneObject>& objects,
                   const CameraIntrinsics& intr, const CameraPose& pose) {
  Frame frame;
  frame.intrinsics = intr;
  frame.pose = pose;
  frame.depth = DepthMap(intr.height, intr.width);
  frame.rgb.height = intr.height;
  frame.rgb.width = intr.width;
  frame.rgb.data.assign(static_cast<size_t>(intr.height) * intr.width * 3, 0);
  frame.gt_instance.assign(static_cast<size_t>(intr.height) * intr.width, 0);
  const Vec3 light = light_direction();
  for (int row = 0; row < intr.height; ++row) {
    for (int col = 0; col < intr.width; ++col) {
      // unnormalized ray with unit optical-axis component: t is the z-depth
      const Vec3 dir_cam((col - intr.cx) / intr.fx, (row - intr.cy) / intr.fy, 1.0);
      const Vec3 dir = pose.rotation * dir_cam;
      const Hit hit = cast_ray(cfg, objects, pose.translation, dir);
      const size_t idx = static_cast<size_t>(row) * intr.width + col;
      if (!std::isfinite(hit.t)) continue;
      frame.depth.values()[idx] = hit.t;
      frame.gt_instance[idx] = hit.instance;
      const double shade = 0.35 + 0.65 * std::max(0.0, hit.normal.dot(light));
      for (int c = 0; c < 3; ++c) {
        const double value = std::clamp(hit.albedo[c] * shade, 0.0, 1.0);
        frame.rgb.data[idx * 3 + c] = static_cast<std::uint8_t>(std::lround(value * 255.0));
      }
    }
  }
  return frame;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const CameraIntrinsics intr = make_intrinsics(config);
  Scene scene;
  scene.vocabulary = config.vocabulary;
  int attempts = 0;
  while (true) {
    scene.objects = place_objects(config, rng, attempts);
    const std::vector<CameraPose> poses = ring_poses(config, rng);
    scene.frames.clear();
    for (const CameraPose& pose : poses) scene.frames.push_back(render_frame(config, scene.objects, intr, pose));
    bool all_visible = true;
    for (const SceneObject& obj : scene.objects) {
      int best = 0;
      for (const Frame& f : scene.frames) {
        best = std::max<int>(best, static_cast<int>(std::count(f.gt_instance.begin(), f.gt_instance.end(), obj.instance_id)));
      }
      all_visible = all_visible && best >= std::max(1, config.min_visible_pixels);
    }
    if (all_visible) break;
    if (++attempts > 10000) throw GenerationError("generate_scene: no placement visible from the cameras");
  }
  for (const SceneObject& obj : scene.objects) scene.instances.push_back({obj.instance_id, obj.class_id});
  scene.surface = sample_surface(config, scene.objects, rng);
  return scene;
}

Scene simulate_depth_holes(const Scene& scene, double hole_rate, std::uint64_t seed) {
  require(hole_rate >= 0.0 && hole_rate <= 1.0, "simulate_depth_holes: rate must be in [0, 1]");
  Scene out = scene;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (size_t v = 0; v < out.frames.size(); ++v) {
    Frame& f = out.frames[v];
    std::mt19937_64 rng(mix_seed(seed, v));
    const Frame& src = scene.frames[v];
    for (int r = 0; r < f.height(); ++r) {
      for (int c = 0; c < f.width(); ++c) {
        const int id = src.instance_at(r, c);
        bool boundary = false;
        if (r > 0) boundary |= src.instance_at(r - 1, c) != id;
        if (r + 1 < f.height()) boundary |= src.instance_at(r + 1, c) != id;
        if (c > 0) boundary |= src.instance_at(r, c - 1) != id;
        if (c + 1 < f.width()) boundary |= src.instance_at(r, c + 1) != id;
        const double draw = u01(rng);  // drawn for every pixel to keep streams aligned
        if (boundary && draw < hole_rate) f.depth.at(r, c) = 0.0;
      }
    }
  }
  return out;
}

std::vector<int> sample_training_frames(int frame_count, int n, std::uint64_t seed) {
  require(n >= 1 && n <= frame_count, "sample_training_frames: need 1 <= n <= frame count");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution consecutive(0.5);
  std::vector<int> out;
  if (n == frame_count || consecutive(rng)) {
    std::uniform_int_distribution<int> start(0, frame_count - n);
    const int s = start(rng);
    for (int i = 0; i < n; ++i) out.push_back(s + i);
    return out;
  }
  std::uniform_int_distribution<int> start(0, frame_count - 1);
  std::uniform_int_distribution<int> skip(1, 4);
  int idx = start(rng);
  while (static_cast<int>(out.size()) < n && idx < frame_count) {
    out.push_back(idx);
    idx += 1 + skip(rng);
  }
  return out;
}

}  // namespace omniseg::scenedata
