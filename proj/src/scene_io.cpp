#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omniseg/scenedata.hpp"

namespace omniseg::scenedata {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d.%s", index, suffix);
  return buf;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pgm16(int width, int height, const std::vector<std::uint16_t>& values) {
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  out.reserve(out.size() + values.size() * 2);
  for (std::uint16_t v : values) {
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

// Parses a binary PNM header; returns offset of the first pixel byte.
size_t parse_pnm_header(const std::string& bytes, const std::string& magic, int& width, int& height,
                        int& maxval, const fs::path& path) {
  size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != magic) throw LoadError(path.string() + ": expected " + magic + " header");
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw LoadError(path.string() + ": malformed header");
  }
  if (pos >= bytes.size()) throw LoadError(path.string() + ": truncated header");
  return pos + 1;  // single whitespace after maxval
}

std::vector<std::uint16_t> read_pgm16(const fs::path& path, int width, int height) {
  const std::string bytes = read_file(path);
  int w, h, maxval;
  const size_t offset = parse_pnm_header(bytes, "P5", w, h, maxval, path);
  if (w != width || h != height) {
    throw LoadError(path.string() + ": size " + std::to_string(w) + "x" + std::to_string(h) +
                    " does not match intrinsics " + std::to_string(width) + "x" + std::to_string(height));
  }
  if (maxval != 65535) throw LoadError(path.string() + ": expected 16-bit maxval 65535");
  const size_t need = static_cast<size_t>(w) * h * 2;
  if (bytes.size() - offset < need) throw LoadError(path.string() + ": truncated pixel data");
  std::vector<std::uint16_t> out(static_cast<size_t>(w) * h);
  for (size_t i = 0; i < out.size(); ++i) {
    const auto hi = static_cast<unsigned char>(bytes[offset + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[offset + 2 * i + 1]);
    out[i] = static_cast<std::uint16_t>((hi << 8) | lo);
  }
  return out;
}

std::vector<double> read_numbers(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    try {
      size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw LoadError(path.string() + ": malformed number '" + token + "'");
    }
  }
  return out;
}

}  // namespace

void save_scene(const Scene& scene, const fs::path& dir) {
  require(!scene.frames.empty(), "save_scene: scene has no frames");
  fs::create_directories(dir);
  const CameraIntrinsics& intr = scene.frames.front().intrinsics;
  for (const Frame& f : scene.frames) {
    require(f.intrinsics == intr, "save_scene: frames must share intrinsics");
  }
  write_file(dir / "intrinsics.txt", fmt_double(intr.fx) + " " + fmt_double(intr.fy) + " " + fmt_double(intr.cx) +
                                         " " + fmt_double(intr.cy) + " " + std::to_string(intr.width) + " " +
                                         std::to_string(intr.height) + "\n");
  for (size_t i = 0; i < scene.frames.size(); ++i) {
    const Frame& f = scene.frames[i];
    const Eigen::Matrix4d m = f.pose.matrix();
    std::string pose;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) pose += fmt_double(m(r, c)) + (c == 3 ? "\n" : " ");
    }
    write_file(dir / frame_name(static_cast<int>(i), "pose.txt"), pose);

    std::string ppm = "P6\n" + std::to_string(f.width()) + " " + std::to_string(f.height()) + "\n255\n";
    ppm.append(f.rgb.data.begin(), f.rgb.data.end());
    write_file(dir / frame_name(static_cast<int>(i), "rgb.ppm"), ppm);

    std::vector<std::uint16_t> mm(f.depth.values().size());
    for (size_t p = 0; p < mm.size(); ++p) {
      mm[p] = static_cast<std::uint16_t>(std::min(65535L, std::lround(f.depth.values()[p] * 1000.0)));
    }
    write_file(dir / frame_name(static_cast<int>(i), "depth.pgm"), pgm16(f.width(), f.height(), mm));

    std::vector<std::uint16_t> inst(f.gt_instance.begin(), f.gt_instance.end());
    write_file(dir / frame_name(static_cast<int>(i), "inst.pgm"), pgm16(f.width(), f.height(), inst));
  }
  std::string labels;
  for (const auto& l : scene.instances) labels += std::to_string(l.instance_id) + " " + std::to_string(l.class_id) + "\n";
  write_file(dir / "labels.txt", labels);

  std::string surface;
  surface.reserve(scene.surface.size() * 64);
  for (const SurfacePoint& p : scene.surface) {
    surface += fmt_double(p.position.x()) + " " + fmt_double(p.position.y()) + " " + fmt_double(p.position.z()) + " " +
               std::to_string(p.instance_id) + " " + std::to_string(p.class_id) + "\n";
  }
  write_file(dir / "surface.xyz", surface);

  std::string vocab;
  for (const auto& e : scene.vocabulary.entries) vocab += std::to_string(e.class_id) + " " + e.name + "\n";
  write_file(dir / "vocab.txt", vocab);
}

Scene load_scene(const fs::path& dir) {
  Scene scene;

  const fs::path vocab_path = dir / "vocab.txt";
  {
    std::istringstream in(read_file(vocab_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      VocabEntry e;
      if (!(ls >> e.class_id)) throw LoadError(vocab_path.string() + ": malformed line '" + line + "'");
      std::string word;
      while (ls >> word) e.name += (e.name.empty() ? "" : " ") + word;
      scene.vocabulary.entries.push_back(e);
    }
    try {
      scene.vocabulary.validate();
    } catch (const ContractViolation& err) {
      throw LoadError(vocab_path.string() + ": " + err.what());
    }
  }

  const fs::path intr_path = dir / "intrinsics.txt";
  const std::vector<double> iv = read_numbers(intr_path);
  if (iv.size() != 6) throw LoadError(intr_path.string() + ": expected six numbers");
  CameraIntrinsics intr{iv[0], iv[1], iv[2], iv[3], static_cast<int>(iv[4]), static_cast<int>(iv[5])};
  if (iv[4] != intr.width || iv[5] != intr.height) throw LoadError(intr_path.string() + ": non-integer image size");
  try {
    intr.validate();
  } catch (const ContractViolation& err) {
    throw LoadError(intr_path.string() + ": " + err.what());
  }

  const fs::path labels_path = dir / "labels.txt";
  {
    const std::vector<double> lv = read_numbers(labels_path);
    if (lv.size() % 2 != 0) throw LoadError(labels_path.string() + ": expected pairs of integers");
    for (size_t i = 0; i < lv.size(); i += 2) {
      const InstanceLabel label{static_cast<int>(lv[i]), static_cast<int>(lv[i + 1])};
      if (label.class_id < 1 || label.class_id >= scene.vocabulary.size()) {
        throw LoadError(labels_path.string() + ": unknown class id " + std::to_string(label.class_id));
      }
      scene.instances.push_back(label);
    }
  }

  for (int i = 0;; ++i) {
    const fs::path pose_path = dir / frame_name(i, "pose.txt");
    if (!fs::exists(pose_path)) break;
    Frame f;
    f.intrinsics = intr;
    const std::vector<double> pv = read_numbers(pose_path);
    if (pv.size() != 16) throw LoadError(pose_path.string() + ": expected 16 numbers");
    Eigen::Matrix4d m;
    for (int k = 0; k < 16; ++k) m(k / 4, k % 4) = pv[k];
    f.pose = CameraPose::from_matrix(m);
    try {
      f.pose.validate();
    } catch (const ContractViolation& err) {
      throw LoadError(pose_path.string() + ": " + err.what());
    }

    const fs::path rgb_path = dir / frame_name(i, "rgb.ppm");
    const std::string rgb = read_file(rgb_path);
    int w, h, maxval;
    const size_t offset = parse_pnm_header(rgb, "P6", w, h, maxval, rgb_path);
    if (w != intr.width || h != intr.height) throw LoadError(rgb_path.string() + ": size does not match intrinsics");
    if (maxval != 255) throw LoadError(rgb_path.string() + ": expected 8-bit maxval 255");
    const size_t need = static_cast<size_t>(w) * h * 3;
    if (rgb.size() - offset < need) throw LoadError(rgb_path.string() + ": truncated pixel data");
    f.rgb.width = w;
    f.rgb.height = h;
    f.rgb.data.assign(rgb.begin() + static_cast<std::ptrdiff_t>(offset),
                      rgb.begin() + static_cast<std::ptrdiff_t>(offset + need));

    const auto depth_mm = read_pgm16(dir / frame_name(i, "depth.pgm"), intr.width, intr.height);
    f.depth = DepthMap(intr.height, intr.width);
    for (size_t p = 0; p < depth_mm.size(); ++p) f.depth.values()[p] = depth_mm[p] / 1000.0;

    const fs::path inst_path = dir / frame_name(i, "inst.pgm");
    const auto inst = read_pgm16(inst_path, intr.width, intr.height);
    f.gt_instance.assign(inst.begin(), inst.end());
    for (int id : f.gt_instance) {
      if (id == 0 || id == kIgnoreLabel) continue;
      bool known = false;
      for (const auto& l : scene.instances) known = known || l.instance_id == id;
      if (!known) throw LoadError(inst_path.string() + ": instance id " + std::to_string(id) + " not in labels.txt");
    }
    scene.frames.push_back(std::move(f));
  }
  if (scene.frames.empty()) throw LoadError((dir / frame_name(0, "pose.txt")).string() + ": missing");

  const fs::path surface_path = dir / "surface.xyz";
  {
    std::istringstream in(read_file(surface_path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ls(line);
      SurfacePoint p;
      if (!(ls >> p.position.x() >> p.position.y() >> p.position.z() >> p.instance_id >> p.class_id)) {
        throw LoadError(surface_path.string() + ": malformed line " + std::to_string(line_no));
      }
      scene.surface.push_back(p);
    }
  }

  try {
    scene.validate();
  } catch (const ContractViolation& err) {
    throw LoadError(dir.string() + ": " + err.what());
  }
  return scene;
}

}  // namespace omniseg::scenedata
