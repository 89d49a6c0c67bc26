#include "omniseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace omniseg::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config key '" + key + "': not an integer: " + v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config key '" + key + "': not an unsigned integer: " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

std::string list_text(const std::vector<int>& v) {
  if (v.empty()) return "none";
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

bool is_path_key(const std::string& key) { return key == "data" || key == "out"; }

}  // namespace

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::Planar: return "2d";
    case TrainMode::Volumetric: return "3d";
    case TrainMode::Joint: return "joint";
  }
  return "3d";
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "image_height") image_height = parse_int(key, v);
  else if (key == "image_width") image_width = parse_int(key, v);
  else if (key == "width") width = parse_int(key, v);
  else if (key == "dec_width") dec_width = parse_int(key, v);
  else if (key == "queries") queries = parse_int(key, v);
  else if (key == "rounds") rounds = parse_int(key, v);
  else if (key == "heads") heads = parse_int(key, v);
  else if (key == "points") points = parse_int(key, v);
  else if (key == "deform_layers") deform_layers = parse_int(key, v);
  else if (key == "k") k = parse_int(key, v);
  else if (key == "voxel") voxel = parse_double(key, v);
  else if (key == "fusion_layers") fusion_layers = parse_int(key, v);
  else if (key == "fusion_stages") fusion_stages = parse_list(key, v);
  else if (key == "open_vocab") open_vocab = parse_bool(key, v);
  else if (key == "disable_3d_fusion") disable_3d_fusion = parse_bool(key, v);
  else if (key == "late_fusion_only") late_fusion_only = parse_bool(key, v);
  else if (key == "mode") {
    if (v == "2d") mode = TrainMode::Planar;
    else if (v == "3d") mode = TrainMode::Volumetric;
    else if (v == "joint") mode = TrainMode::Joint;
    else throw ConfigError("config key 'mode': expected 2d, 3d or joint, got " + v);
  }
  else if (key == "views") views = parse_int(key, v);
  else if (key == "iterations") iterations = parse_int(key, v);
  else if (key == "batch") batch = parse_int(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "lr_decay_start") lr_decay_start = parse_double(key, v);
  else if (key == "clip") clip = parse_double(key, v);
  else if (key == "loss_class") loss_class = parse_double(key, v);
  else if (key == "loss_bce") loss_bce = parse_double(key, v);
  else if (key == "loss_dice") loss_dice = parse_double(key, v);
  else if (key == "no_object_weight") no_object_weight = parse_double(key, v);
  else if (key == "augment_2d") augment_2d = parse_bool(key, v);
  else if (key == "augment_3d") augment_3d = parse_bool(key, v);
  else if (key == "min_scale") min_scale = parse_double(key, v);
  else if (key == "max_scale") max_scale = parse_double(key, v);
  else if (key == "color_jitter") color_jitter = parse_double(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "log_every") log_every = parse_int(key, v);
  else if (key == "eval_every") eval_every = parse_int(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_int(key, v);
  else if (key == "data") data = v;
  else if (key == "out") out = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  const auto b = [](bool x) { return std::string(x ? "1" : "0"); };
  return {
      {"image_height", std::to_string(image_height)},
      {"image_width", std::to_string(image_width)},
      {"width", std::to_string(width)},
      {"dec_width", std::to_string(dec_width)},
      {"queries", std::to_string(queries)},
      {"rounds", std::to_string(rounds)},
      {"heads", std::to_string(heads)},
      {"points", std::to_string(points)},
      {"deform_layers", std::to_string(deform_layers)},
      {"k", std::to_string(k)},
      {"voxel", fmt_double(voxel)},
      {"fusion_layers", std::to_string(fusion_layers)},
      {"fusion_stages", list_text(fusion_stages)},
      {"open_vocab", b(open_vocab)},
      {"disable_3d_fusion", b(disable_3d_fusion)},
      {"late_fusion_only", b(late_fusion_only)},
      {"mode", mode_name(mode)},
      {"views", std::to_string(views)},
      {"iterations", std::to_string(iterations)},
      {"batch", std::to_string(batch)},
      {"lr", fmt_double(lr)},
      {"lr_decay_start", fmt_double(lr_decay_start)},
      {"clip", fmt_double(clip)},
      {"loss_class", fmt_double(loss_class)},
      {"loss_bce", fmt_double(loss_bce)},
      {"loss_dice", fmt_double(loss_dice)},
      {"no_object_weight", fmt_double(no_object_weight)},
      {"augment_2d", b(augment_2d)},
      {"augment_3d", b(augment_3d)},
      {"min_scale", fmt_double(min_scale)},
      {"max_scale", fmt_double(max_scale)},
      {"color_jitter", fmt_double(color_jitter)},
      {"seed", std::to_string(seed)},
      {"log_every", std::to_string(log_every)},
      {"eval_every", std::to_string(eval_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"data", data},
      {"out", out},
  };
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : entries()) s += k + "=" + v + "\n";
  return s;
}

std::uint64_t RunConfig::hash() const {
  std::string s;
  for (const auto& [k, v] : entries()) {
    if (!is_path_key(k)) s += k + "=" + v + "\n";
  }
  return fnv1a64(s);
}

void RunConfig::validate() const {
  const auto check = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "': " + what);
  };
  check(image_height > 0 && image_height % 32 == 0, "image_height", "must be a positive multiple of 32");
  check(image_width > 0 && image_width % 32 == 0, "image_width", "must be a positive multiple of 32");
  check(width >= 1 && width <= 256, "width", "must be in [1, 256]");
  check(dec_width >= 4 && dec_width % 4 == 0, "dec_width", "must be a positive multiple of 4");
  check(queries >= 1 && queries <= 200, "queries", "must be in [1, 200]");
  check(rounds >= 0 && rounds <= 32, "rounds", "must be in [0, 32]");
  check(heads >= 1 && dec_width % heads == 0 && width % heads == 0, "heads", "must divide width and dec_width");
  check(points >= 1 && points <= 16, "points", "must be in [1, 16]");
  check(deform_layers >= 0 && deform_layers <= 8, "deform_layers", "must be in [0, 8]");
  check(k >= 1 && k <= 64, "k", "must be in [1, 64]");
  check(voxel > 0.0 && voxel < 100.0, "voxel", "must be in (0, 100)");
  check(fusion_layers >= 0 && fusion_layers <= 8, "fusion_layers", "must be in [0, 8]");
  for (int s : fusion_stages) check(s >= 0 && s <= 3, "fusion_stages", "entries must be in [0, 3]");
  check(views >= 1, "views", "must be at least 1");
  check(iterations >= 0, "iterations", "must be non-negative");
  check(batch >= 1 && batch <= 64, "batch", "must be in [1, 64]");
  check(lr > 0.0 && lr < 1.0, "lr", "must be in (0, 1)");
  check(lr_decay_start >= 0.0 && lr_decay_start <= 1.0, "lr_decay_start", "must be in [0, 1]");
  check(clip >= 0.0, "clip", "must be non-negative");
  check(loss_class >= 0.0 && loss_bce >= 0.0 && loss_dice >= 0.0 && no_object_weight >= 0.0, "loss_class",
        "loss weights must be non-negative");
  check(min_scale > 0.0 && max_scale >= min_scale && max_scale <= 4.0, "min_scale", "need 0 < min_scale <= max_scale <= 4");
  check(color_jitter >= 0.0 && color_jitter < 1.0, "color_jitter", "must be in [0, 1)");
  check(log_every >= 1, "log_every", "must be at least 1");
  check(eval_every >= 0 && checkpoint_every >= 0, "eval_every", "intervals must be non-negative");
}

model::ModelConfig RunConfig::model(const scenedata::Vocabulary& vocabulary) const {
  model::ModelConfig m;
  m.image_height = image_height;
  m.image_width = image_width;
  m.backbone.width = width;
  m.fusion.heads = heads;
  m.fusion.layers = fusion_layers;
  m.fusion.k = k;
  m.fusion.voxel_size_at_4 = voxel;
  m.decoder.width = dec_width;
  m.decoder.queries = queries;
  m.decoder.rounds = rounds;
  m.decoder.heads = heads;
  m.decoder.points = points;
  m.decoder.deform_layers = deform_layers;
  m.decoder.classes = vocabulary.size();
  m.decoder.open_vocabulary = open_vocab;
  for (const auto& e : vocabulary.entries) m.decoder.class_names.push_back(e.name);
  m.fusion_stages = fusion_stages;
  m.disable_3d_fusion = disable_3d_fusion;
  m.late_fusion_only = late_fusion_only;
  return m;
}

learn::LossWeights RunConfig::loss_weights() const {
  return learn::LossWeights{loss_class, loss_bce, loss_dice, no_object_weight};
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace omniseg::config
