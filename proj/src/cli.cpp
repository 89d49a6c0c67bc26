#include "omniseg/cli.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "omniseg/checkpoint.hpp"
#include "omniseg/pipeline.hpp"

namespace omniseg::cli {

namespace fs = std::filesystem;

RunLock::RunLock(const fs::path& directory) : path_(directory / "run.lock") {
  fs::create_directories(directory);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const bool written = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
      ::close(fd);
      if (!written) throw std::runtime_error("cannot write " + path_.string());
      return;
    }
    if (errno != EEXIST) throw std::runtime_error("cannot create " + path_.string());
    long owner = 0;
    std::ifstream(path_) >> owner;
    if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
      throw UserError(directory.string() + " is in use by process " + std::to_string(owner) + " (run.lock)");
    }
    fs::remove(path_);  // stale
  }
  throw UserError("cannot acquire " + path_.string());
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- gradcheck

bool GradcheckReport::ok() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const GradcheckBlock& b) { return b.ok; });
}

std::string GradcheckReport::to_text() const {
  std::ostringstream out;
  char buf[256];
  for (const auto& b : blocks) {
    std::snprintf(buf, sizeof buf, "%-28s %6ld %6d %.3e %s\n", b.name.c_str(), b.size, b.checked,
                  b.max_relative_error, b.ok ? "ok" : "FAIL");
    out << buf;
  }
  out << "parameters " << parameters << " tolerance " << tolerance << " " << (ok() ? "pass" : "fail") << "\n";
  return out.str();
}

config::RunConfig tiny_config() {
  config::RunConfig c;
  c.image_height = 32;
  c.image_width = 32;
  c.width = 1;
  c.dec_width = 4;
  c.queries = 3;
  c.rounds = 3;
  c.heads = 1;
  c.points = 1;
  c.deform_layers = 1;
  c.k = 4;
  c.voxel = 0.1;
  c.fusion_layers = 1;
  c.views = 2;
  c.mode = config::TrainMode::Volumetric;
  c.augment_2d = false;
  c.augment_3d = false;
  return c;
}

namespace {

double graph_loss(autodiff::ParamStore<double>& store, const model::ModelConfig& mcfg, const model::Prepared& prepared,
                  const learn::Targets& targets, const learn::LossWeights& weights, bool backward) {
  autodiff::Graph<double> g(backward);
  nn::Binder<double> bind(g, store);
  const decoder::DecoderOutput out = model::forward(bind, mcfg, prepared);
  autodiff::Var total;
  for (size_t r = 0; r < out.class_logits.size(); ++r) {
    const autodiff::Var l = learn::set_loss(g, out.class_logits[r], out.mask_logits[r], targets, weights);
    total = total.valid() ? g.add(total, l) : l;
  }
  require(total.valid(), "gradcheck: the model produced no loss (rounds = 0)");
  if (backward) g.backward(total);
  return g.value(total)(0, 0);
}

}  // namespace

GradcheckReport gradcheck(const config::RunConfig& config, std::uint64_t seed, const std::string& corrupt,
                          int entries_per_block) {
  config.validate();
  scenedata::SceneConfig sc;
  sc.width = config.image_width;
  sc.height = config.image_height;
  sc.views = std::max(1, config.views);
  sc.min_objects = 2;
  sc.max_objects = 3;
  sc.min_visible_pixels = 4;
  sc.samples_per_object = 16;
  sc.room_samples = 64;
  const scenedata::Scene scene = scenedata::generate_scene(mix_seed(seed, 0x6c), sc);

  const model::ModelConfig mcfg = config.model(scene.vocabulary);
  autodiff::ParamStore<float> init;
  model::register_params(init, mcfg, mix_seed(seed, 0x1417));
  autodiff::ParamStore<double> store = init.cast<double>();
  // perturb every block so that zero-initialized branches carry gradient
  std::mt19937_64 rng(mix_seed(seed, 0x9a));
  std::normal_distribution<double> noise(0.0, 0.2);
  for (auto& b : store.blocks()) {
    for (Eigen::Index i = 0; i < b->value.size(); ++i) b->value.data()[i] += noise(rng);
  }

  std::vector<const scenedata::Frame*> frames;
  for (const auto& f : scene.frames) frames.push_back(&f);
  const model::Batch batch = model::make_batch(frames, config.mode != config::TrainMode::Planar);
  const model::Prepared prepared = model::prepare(batch, mcfg);
  const learn::Targets targets = pipeline::make_targets(batch, scene);
  const learn::LossWeights weights = config.loss_weights();

  store.zero_grad();
  const double loss = graph_loss(store, mcfg, prepared, targets, weights, true);
  const double floor = 1e-6 * std::max(1.0, std::abs(loss));

  GradcheckReport report;
  const double h = 1e-4;
  for (auto& b : store.blocks()) {
    GradcheckBlock r;
    r.name = b->name;
    r.size = static_cast<long>(b->value.size());
    report.parameters += r.size;
    Matrix<double> analytic = b->grad.size() ? b->grad : Matrix<double>::Zero(b->value.rows(), b->value.cols());
    if (b->name == corrupt) analytic = analytic * 1.5 + Matrix<double>::Constant(analytic.rows(), analytic.cols(), 1e-3);

    std::vector<Eigen::Index> probe(static_cast<size_t>(r.size));
    for (Eigen::Index i = 0; i < r.size; ++i) probe[i] = i;
    if (entries_per_block > 0 && r.size > entries_per_block) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(entries_per_block);
    }
    double worst = 0.0, scale = 0.0;
    for (Eigen::Index i : probe) {
      double& x = b->value.data()[i];
      const double saved = x;
      const auto at = [&](double dx) {
        x = saved + dx;
        return graph_loss(store, mcfg, prepared, targets, weights, false);
      };
      // fourth-order central stencil
      const auto stencil = [&](double step) {
        return (at(-2 * step) - 8 * at(-step) + 8 * at(step) - at(2 * step)) / (12 * step);
      };
      // a ReLU kink inside the stencil shows up as disagreement between step
      // sizes; halve until two consecutive estimates agree
      double step = h;
      double numeric = stencil(step);
      for (int halving = 0; halving < 10; ++halving) {
        const double finer = stencil(step / 2);
        const double noise = 1e-14 * std::max(1.0, std::abs(loss)) / (step / 2);
        const bool agree = std::abs(finer - numeric) <= 1e-6 * std::max(std::abs(finer), std::abs(numeric)) + 4 * noise;
        numeric = finer;
        step /= 2;
        if (agree) break;
      }
      x = saved;
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
      ++r.checked;
    }
    // relative to the block's largest gradient entry; blocks whose gradient
    // vanishes are compared against a floor above the rounding noise of the loss
    r.max_relative_error = worst / std::max(scale, floor);
    r.ok = r.max_relative_error <= report.tolerance;
    report.blocks.push_back(r);
  }
  return report;
}

// --------------------------------------------------------------------- plot

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool to_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

PlotData parse_metrics(const std::string& text, const std::string& origin) {
  std::vector<std::pair<int, std::string>> lines;
  {
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) lines.emplace_back(number, line);
    }
  }
  if (lines.empty()) throw UserError(origin + ": empty metrics file");
  const auto fail = [&](int number, const std::string& what) {
    return UserError(origin + ":" + std::to_string(number) + ": " + what);
  };

  PlotData d;
  if (lines[0].second.find(',') != std::string::npos) {
    const auto header = split(lines[0].second, ',');
    // "label" from eval; "views" or "iteration" from plot's own CSV output
    const bool known = header.size() >= 2 && (header[0] == "label" || header[0] == "views" || header[0] == "iteration");
    if (!known) throw fail(lines[0].first, "expected a `label,...` CSV header");
    d.x_label = header[0] == "iteration" ? "iteration" : "views";
    d.columns = header;
    d.columns[0] = d.x_label;
    if (lines.size() < 2) throw fail(lines[0].first, "CSV has no data rows");
    for (size_t i = 1; i < lines.size(); ++i) {
      const auto cells = split(lines[i].second, ',');
      if (cells.size() != header.size()) throw fail(lines[i].first, "expected " + std::to_string(header.size()) + " fields");
      std::vector<double> row(cells.size());
      if (!to_double(cells[0], row[0])) row[0] = static_cast<double>(i);
      for (size_t c = 1; c < cells.size(); ++c) {
        if (cells[c].empty()) {
          row[c] = std::numeric_limits<double>::quiet_NaN();
        } else if (!to_double(cells[c], row[c])) {
          throw fail(lines[i].first, "not a number: '" + cells[c] + "'");
        }
      }
      d.rows.push_back(std::move(row));
    }
    return d;
  }

  d.x_label = "iteration";
  d.columns = {"iteration", "total", "class", "bce", "dice"};
  std::vector<std::map<std::string, double>> extras;
  for (const auto& [number, line] : lines) {
    std::istringstream in(line);
    std::vector<std::string> tok;
    for (std::string t; in >> t;) tok.push_back(t);
    if (tok.size() < 5 || (tok.size() - 5) % 2 != 0) throw fail(number, "expected `iter total class bce dice [name value]...`");
    std::vector<double> row(5);
    for (int c = 0; c < 5; ++c) {
      if (!to_double(tok[c], row[c])) throw fail(number, "not a number: '" + tok[c] + "'");
    }
    std::map<std::string, double> extra;
    for (size_t c = 5; c < tok.size(); c += 2) {
      double v;
      if (!to_double(tok[c + 1], v)) throw fail(number, "not a number: '" + tok[c + 1] + "'");
      extra[tok[c]] = v;
      if (std::find(d.columns.begin(), d.columns.end(), tok[c]) == d.columns.end()) d.columns.push_back(tok[c]);
    }
    d.rows.push_back(std::move(row));
    extras.push_back(std::move(extra));
  }
  for (size_t r = 0; r < d.rows.size(); ++r) {
    for (size_t c = 5; c < d.columns.size(); ++c) {
      const auto it = extras[r].find(d.columns[c]);
      d.rows[r].push_back(it == extras[r].end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
    }
  }
  return d;
}

std::string plot_csv(const PlotData& data) {
  std::ostringstream out;
  for (size_t c = 0; c < data.columns.size(); ++c) out << (c ? "," : "") << data.columns[c];
  out << "\n";
  for (const auto& row : data.rows) {
    for (size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << fmt(row[c]);
    out << "\n";
  }
  return out.str();
}

std::string plot_svg(const PlotData& data, const std::string& title) {
  const double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& row : data.rows) {
    x0 = std::min(x0, row[0]);
    x1 = std::max(x1, row[0]);
    for (size_t c = 1; c < row.size(); ++c) {
      if (std::isnan(row[c])) continue;
      y0 = std::min(y0, row[c]);
      y1 = std::max(y1, row[c]);
    }
  }
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x0 -= 0.5, x1 += 0.5;
  if (y1 <= y0) y0 -= 0.5, y1 += 0.5;
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  const auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" << title
    << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  const auto label = [&](double x, double y, const std::string& text, const char* anchor) {
    s << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"" << anchor
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << text << "</text>\n";
  };
  label(left, H - bottom + 16, fmt(x0), "middle");
  label(W - right, H - bottom + 16, fmt(x1), "middle");
  label(left - 6, H - bottom + 4, fmt(y0), "end");
  label(left - 6, top + 4, fmt(y1), "end");
  label((left + W - right) / 2, H - 12, data.x_label, "middle");
  s << "<text x=\"18\" y=\"" << (top + H - bottom) / 2 << "\" transform=\"rotate(-90 18 " << (top + H - bottom) / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">value</text>\n";
  for (size_t c = 1; c < data.columns.size(); ++c) {
    const char* color = colors[(c - 1) % 8];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& row : data.rows) {
      if (std::isnan(row[c])) continue;
      s << (first ? "" : " ") << fmt(px(row[0])) << "," << fmt(py(row[c]));
      first = false;
    }
    s << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(c);
    s << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    label(W - right + 34, ly + 4, data.columns[c], "start");
  }
  s << "</svg>\n";
  return s.str();
}

// ----------------------------------------------------------------- commands

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<int, int> parse_size(const std::string& s) {
  int h = 0, w = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &h, &x, &w, &extra) != 3 || (x != 'x' && x != 'X') || h <= 0 || w <= 0) {
    throw UserError("--size: expected HxW, got '" + s + "'");
  }
  return {h, w};
}

struct SynthArgs {
  std::string out;
  int scenes = 0;
  std::uint64_t seed = 1;
  int views = 4;
  std::string size = "64x64";
  double hole_rate = 0.0;
  double pillar = 0.0;
  bool duplicate_class = false;
  int min_objects = 3;
  int max_objects = 6;
};

int cmd_synth(const SynthArgs& a) {
  const auto [h, w] = parse_size(a.size);
  if (a.hole_rate < 0.0 || a.hole_rate > 1.0) throw UserError("--hole-rate must be in [0, 1]");
  scenedata::SceneConfig sc;
  sc.height = h;
  sc.width = w;
  sc.views = a.views;
  sc.pillar_size = a.pillar;
  sc.duplicate_class = a.duplicate_class;
  sc.min_objects = a.min_objects;
  sc.max_objects = a.max_objects;
  try {
    sc.validate();
  } catch (const ContractViolation& e) {
    throw UserError(e.what());
  }
  RunLock lock(a.out);
  pipeline::synthesize(a.out, a.scenes, a.seed, sc, a.hole_rate);
  std::cout << "wrote " << a.scenes << " scenes to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string mode;
  int iterations = -1;
  long long seed = -1;
  std::vector<std::string> set;
  bool disable_3d_fusion = false;
  bool late_fusion_only = false;
};

int cmd_train(const TrainArgs& a) {
  config::RunConfig cfg = a.config.empty() ? config::RunConfig{} : config::RunConfig::load(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UserError("--set: expected key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.mode.empty()) cfg.set("mode", a.mode);
  if (a.iterations >= 0) cfg.iterations = a.iterations;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.disable_3d_fusion) cfg.disable_3d_fusion = true;
  if (a.late_fusion_only) cfg.late_fusion_only = true;
  cfg.data = a.data;
  cfg.out = a.out;
  cfg.validate();

  const pipeline::Dataset train = pipeline::load_dataset(a.data, "train");
  if (train.size() == 0) throw LoadError(a.data + ": no training scenes in manifest.txt");
  const fs::path out = a.out;
  RunLock lock(out);
  write_file(out / "config.txt", cfg.to_text());
  std::ofstream log(out / "metrics.log");
  if (!log) throw std::runtime_error("cannot write " + (out / "metrics.log").string());

  pipeline::TrainHooks hooks;
  hooks.log_line = [&](const std::string& line) {
    log << line << "\n" << std::flush;
    std::cout << line << "\n" << std::flush;
  };
  hooks.checkpoint = [&](long it, const autodiff::ParamStore<float>& params) {
    checkpoint::save(out / ("checkpoint_" + std::to_string(it) + ".bin"), cfg, params, it);
  };
  pipeline::Dataset test;
  if (cfg.eval_every > 0) {
    test = pipeline::load_dataset(a.data, "test");
    if (test.size() > 0) {
      hooks.evaluate = [&](const autodiff::ParamStore<float>& params) {
        return pipeline::evaluate(cfg, params, test, pipeline::EvalOptions{});
      };
    }
  }
  const auto params = pipeline::train(cfg, train, hooks);
  checkpoint::save(out / "checkpoint.bin", cfg, params, cfg.iterations);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string domain = "pixels";
  std::vector<int> views{0};
  bool oracle = false;
  std::string out;
  std::string split = "test";
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() && !a.oracle) throw UserError("eval: --checkpoint is required unless --oracle is given");
  if (a.domain != "pixels" && a.domain != "mesh") throw UserError("--domain must be pixels or mesh");
  checkpoint::Checkpoint ck;
  if (!a.checkpoint.empty()) ck = checkpoint::load(a.checkpoint);
  const pipeline::Dataset data = pipeline::load_dataset(a.data, a.split);
  if (data.size() == 0) throw LoadError(a.data + ": no '" + a.split + "' scenes in manifest.txt");
  if (a.domain == "mesh") {
    for (size_t i = 0; i < data.scenes.size(); ++i) {
      if (data.scenes[i].surface.empty()) throw LoadError(data.names[i] + ": mesh domain needs surface points");
    }
  }
  const fs::path out = !a.out.empty() ? fs::path(a.out)
                       : !a.checkpoint.empty() ? fs::path(a.checkpoint).parent_path()
                                              : fs::path(a.data);
  RunLock lock(out.empty() ? fs::path(".") : out);

  std::string text;
  std::string csv = evalmetrics::EvalReport::csv_header();
  for (int k : a.views) {
    if (k < 0) throw UserError("--views must be non-negative");
    pipeline::EvalOptions options;
    options.domain = a.domain == "mesh" ? pipeline::Domain::Mesh : pipeline::Domain::Pixels;
    options.views = k;
    options.oracle = a.oracle;
    const auto report = pipeline::evaluate(ck.config, ck.params, data, options);
    const int frames = static_cast<int>(data.scenes[0].frames.size());
    const int used = k == 0 ? frames : std::min(k, frames);
    if (a.views.size() > 1) text += "# views " + std::to_string(used) + "\n";
    text += report.to_text();
    const std::string row = report.to_csv(std::to_string(used));
    csv += row.substr(row.find('\n') + 1);
    std::cout << "views " << used << " mAP " << report.map << " mAP50 " << report.map50 << " mAP25 " << report.map25
              << " mIoU " << report.miou << "\n";
  }
  write_file(out / "report.txt", text);
  write_file(out / "report.csv", csv);
  return kOk;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, const std::string& corrupt, int entries) {
  config::RunConfig cfg = config_path.empty() ? tiny_config() : config::RunConfig::load(config_path);
  if (!corrupt.empty()) {
    autodiff::ParamStore<float> probe;
    model::register_params(probe, cfg.model(scenedata::Vocabulary::standard()), 0);
    if (!probe.contains(corrupt)) throw UserError("--corrupt: no parameter block named " + corrupt);
  }
  const GradcheckReport report = gradcheck(cfg, seed, corrupt, entries);
  std::cout << report.to_text();
  if (report.ok()) return kOk;
  std::cerr << "gradient check failed for:";
  for (const auto& b : report.blocks) {
    if (!b.ok) std::cerr << " " << b.name;
  }
  std::cerr << "\n";
  return kVerificationFailure;
}

int cmd_plot(const std::string& metrics, const std::string& out) {
  const fs::path target(out);
  const std::string ext = target.extension().string();
  if (ext != ".svg" && ext != ".csv") throw UserError("--out must end in .svg or .csv");
  const PlotData data = parse_metrics(read_file(metrics), metrics);
  const std::string title = data.x_label == "views" ? "metrics vs context views" : "training curves";
  write_file(target, ext == ".svg" ? plot_svg(data, title) : plot_csv(data));
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Multiview RGB-D instance segmentation on synthetic scenes"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--scenes", synth.scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--views", synth.views, "Frames per scene")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Image size HxW");
  s->add_option("--hole-rate", synth.hole_rate, "Fraction of boundary pixels with missing depth");
  s->add_option("--pillar", synth.pillar, "Side of a central occluding pillar (0 = none)");
  s->add_flag("--duplicate-class", synth.duplicate_class, "Force two objects of one class");
  s->add_option("--min-objects", synth.min_objects, "Minimum objects per scene");
  s->add_option("--max-objects", synth.max_objects, "Maximum objects per scene");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", train.config, "Config file (key = value)");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--mode", train.mode, "2d, 3d or joint");
  t->add_option("--iterations", train.iterations, "Override the iteration count");
  t->add_option("--seed", train.seed, "Override the seed");
  t->add_option("--set", train.set, "Config override key=value (repeatable)");
  t->add_flag("--disable-3d-fusion", train.disable_3d_fusion, "Remove every 3D fusion stage");
  t->add_flag("--late-fusion-only", train.late_fusion_only, "Apply 3D fusion after the full 2D backbone");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file");
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--domain", eval.domain, "pixels or mesh");
  e->add_option("--views", eval.views, "Context views (0 = all); a comma list gives one row each")->delimiter(',');
  e->add_flag("--oracle", eval.oracle, "Score ground-truth-derived predictions");
  e->add_option("--out", eval.out, "Report directory (default: next to the checkpoint)");
  e->add_option("--split", eval.split, "train, test or all");

  std::string gc_config, gc_corrupt;
  std::uint64_t gc_seed = 1;
  int gc_entries = 0;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  g->add_option("--config", gc_config, "Config file (default: built-in tiny model)");
  g->add_option("--seed", gc_seed, "Random seed");
  g->add_option("--corrupt", gc_corrupt, "Perturb the analytic gradient of one block");
  g->add_option("--entries", gc_entries, "Probe at most this many entries per block (0 = all)");

  std::string plot_metrics, plot_out;
  auto* p = app.add_subcommand("plot", "Plot a metrics log or a views CSV");
  p->add_option("--metrics", plot_metrics, "metrics.log or report.csv")->required();
  p->add_option("--out", plot_out, "Output .svg or .csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUserError;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
    if (g->parsed()) return cmd_gradcheck(gc_config, gc_seed, gc_corrupt, gc_entries);
    if (p->parsed()) return cmd_plot(plot_metrics, plot_out);
  } catch (const UserError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUserError;
  } catch (const config::ConfigError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUserError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  }
  return kUserError;
}

}  // namespace omniseg::cli
