#include "omniseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace omniseg::pipeline {

namespace fs = std::filesystem;

void synthesize(const fs::path& out, int count, std::uint64_t seed, const scenedata::SceneConfig& scene,
                double hole_rate) {
  require(count >= 1, "synth: scene count must be positive");
  scene.validate();
  fs::create_directories(out);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(mix_seed(seed, 0x5011)));
  const int train = count == 1 ? 1 : static_cast<int>(std::lround(count * 0.75));
  std::vector<std::string> split(count);
  for (int i = 0; i < count; ++i) split[order[i]] = i < train ? "train" : "test";

  parallel_for(count, [&](int i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    scenedata::Scene s = scenedata::generate_scene(mix_seed(seed, static_cast<std::uint64_t>(i) + 1), scene);
    if (hole_rate > 0.0) s = scenedata::simulate_depth_holes(s, hole_rate, mix_seed(seed, 0x401e + i));
    scenedata::save_scene(s, out / name);
  });
  std::ofstream manifest(out / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write " + (out / "manifest.txt").string());
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    manifest << name << " " << split[i] << "\n";
  }
  if (!manifest) throw std::runtime_error("failed writing " + (out / "manifest.txt").string());
}

Dataset load_dataset(const fs::path& data, const std::string& split) {
  const fs::path manifest_path = data / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw LoadError(manifest_path.string() + ": cannot open dataset manifest");
  Dataset d;
  std::string line;
  int number = 0;
  while (std::getline(manifest, line)) {
    ++number;
    std::istringstream in(line);
    std::string name, which;
    if (!(in >> name)) continue;
    if (!(in >> which) || (which != "train" && which != "test")) {
      throw LoadError(manifest_path.string() + ":" + std::to_string(number) + ": expected `name train|test`");
    }
    if (split == "all" || split == which) d.names.push_back(name);
  }
  d.scenes.resize(d.names.size());
  parallel_for(static_cast<int>(d.names.size()), [&](int i) { d.scenes[i] = scenedata::load_scene(data / d.names[i]); });
  return d;
}

learn::Targets make_targets(const model::Batch& batch, const scenedata::Scene& scene) {
  learn::Targets t;
  const auto& ids = batch.token_instances;
  t.valid.resize(ids.size());
  bool any_ignored = false;
  std::set<int> present;
  for (size_t i = 0; i < ids.size(); ++i) {
    t.valid[i] = ids[i] != scenedata::kIgnoreLabel;
    if (!t.valid[i]) {
      any_ignored = true;
      continue;
    }
    present.insert(ids[i]);
  }
  if (!any_ignored) t.valid.clear();
  // background first, then instances by id
  for (int id : present) {
    learn::Segment s;
    s.class_id = scene.class_of(id);
    s.mask.resize(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) s.mask[i] = ids[i] == id;
    t.segments.push_back(std::move(s));
  }
  return t;
}

template <typename T>
learn::LossTerms batch_loss(autodiff::ParamStore<T>& params, const model::ModelConfig& model, const model::Batch& batch,
                            const learn::Targets& targets, const learn::LossWeights& weights, double scale,
                            bool backward) {
  autodiff::Graph<T> g(backward);
  nn::Binder<T> bind(g, params);
  const model::Prepared prepared = model::prepare(batch, model);
  const decoder::DecoderOutput out = model::forward(bind, model, prepared);
  learn::LossTerms last;
  std::vector<autodiff::Var> losses;
  for (size_t r = 0; r < out.class_logits.size(); ++r) {
    losses.push_back(learn::set_loss(g, out.class_logits[r], out.mask_logits[r], targets, weights, &last));
  }
  if (backward && !losses.empty()) {
    autodiff::Var total = losses[0];
    for (size_t r = 1; r < losses.size(); ++r) total = g.add(total, losses[r]);
    g.backward(g.scale(total, static_cast<T>(scale)));
  }
  return last;
}

template learn::LossTerms batch_loss(autodiff::ParamStore<float>&, const model::ModelConfig&, const model::Batch&,
                                     const learn::Targets&, const learn::LossWeights&, double, bool);
template learn::LossTerms batch_loss(autodiff::ParamStore<double>&, const model::ModelConfig&, const model::Batch&,
                                     const learn::Targets&, const learn::LossWeights&, double, bool);

namespace {

scenedata::Frame color_jitter(const scenedata::Frame& f, std::uint64_t seed, double amount) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  scenedata::Augment2DParams p;
  p.brightness = u(rng);
  p.contrast = u(rng);
  return scenedata::augment_2d(f, p);
}

std::string format_log(int iteration, const learn::LossTerms& t, const evalmetrics::EvalReport* report) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f", iteration, t.total, t.cls, t.bce, t.dice);
  std::string line = buf;
  if (report) {
    std::snprintf(buf, sizeof buf, " mAP %.6f mAP50 %.6f mAP25 %.6f mIoU %.6f", report->map, report->map50,
                  report->map25, report->miou);
    line += buf;
  }
  return line;
}

}  // namespace

autodiff::ParamStore<float> train(const config::RunConfig& config, const Dataset& data, const TrainHooks& hooks,
                                  std::vector<IterationLog>* history, const autodiff::ParamStore<float>* init) {
  config.validate();
  require(data.size() >= 1, "train: empty dataset");
  const scenedata::Vocabulary& vocab = data.scenes[0].vocabulary;
  const model::ModelConfig mcfg = config.model(vocab);
  autodiff::ParamStore<float> params;
  if (init) {
    check_parameters(*init, mcfg);
    for (const auto& b : init->blocks()) params.add(b->name, b->value);
  } else {
    model::register_params(params, mcfg, mix_seed(config.seed, 0x1417));
  }
  learn::Adam adam(learn::AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.clip});
  const learn::LossWeights weights = config.loss_weights();

  for (int it = 0; it < config.iterations; ++it) {
    const bool volumetric = config.mode == config::TrainMode::Volumetric ||
                            (config.mode == config::TrainMode::Joint && it % 2 == 1);
    std::mt19937_64 rng(mix_seed(config.seed, 0x7a11 + static_cast<std::uint64_t>(it)));
    params.zero_grad();
    learn::LossTerms mean;
    for (int b = 0; b < config.batch; ++b) {
      const auto& scene = data.scenes[std::uniform_int_distribution<int>(0, data.size() - 1)(rng)];
      const std::uint64_t sample_seed = rng();
      model::Batch batch;
      if (volumetric) {
        const int count = static_cast<int>(scene.frames.size());
        const auto idx = scenedata::sample_training_frames(count, std::min(config.views, count), sample_seed);
        std::vector<scenedata::Frame> frames;
        for (size_t i = 0; i < idx.size(); ++i) {
          const auto& f = scene.frames[idx[i]];
          frames.push_back(config.augment_2d && config.color_jitter > 0.0
                               ? color_jitter(f, mix_seed(sample_seed, i + 1), config.color_jitter)
                               : f);
        }
        std::vector<const scenedata::Frame*> ptrs;
        for (const auto& f : frames) ptrs.push_back(&f);
        std::optional<scenedata::Augment3DParams> aug;
        if (config.augment_3d) aug = scenedata::draw_augment_3d(mix_seed(sample_seed, 0x3d));
        batch = model::make_batch(ptrs, true, aug);
      } else {
        const auto& f = scene.frames[std::uniform_int_distribution<int>(0, static_cast<int>(scene.frames.size()) - 1)(rng)];
        scenedata::Frame frame = f;
        if (config.augment_2d) {
          frame = scenedata::augment_2d(f, scenedata::draw_augment_2d(mix_seed(sample_seed, 0x2d), f.height(), f.width(),
                                                                      config.min_scale, config.max_scale,
                                                                      config.color_jitter));
        }
        batch = model::make_batch({&frame}, false);
      }
      const learn::Targets targets = make_targets(batch, scene);
      const learn::LossTerms terms = batch_loss(params, mcfg, batch, targets, weights, 1.0 / config.batch, true);
      mean.total += terms.total / config.batch;
      mean.cls += terms.cls / config.batch;
      mean.bce += terms.bce / config.batch;
      mean.dice += terms.dice / config.batch;
    }
    const double decay_from = config.lr_decay_start * config.iterations;
    double lr_scale = 1.0;
    if (it >= decay_from && config.iterations > decay_from) {
      lr_scale = 1.0 - 0.9 * (it - decay_from) / (config.iterations - decay_from);
    }
    const double norm = adam.step(params, lr_scale);
    if (history) history->push_back(IterationLog{it + 1, volumetric, mean, norm});

    const int done = it + 1;
    const bool eval_now = hooks.evaluate && config.eval_every > 0 && done % config.eval_every == 0;
    if (hooks.log_line && (done % config.log_every == 0 || done == config.iterations || eval_now)) {
      evalmetrics::EvalReport report;
      if (eval_now) report = hooks.evaluate(params);
      hooks.log_line(format_log(done, mean, eval_now ? &report : nullptr));
    }
    if (hooks.checkpoint && config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
      hooks.checkpoint(done, params);
    }
  }
  return params;
}

void check_parameters(const autodiff::ParamStore<float>& loaded, const model::ModelConfig& model) {
  autodiff::ParamStore<float> reference;
  model::register_params(reference, model, 0);
  require(loaded.blocks().size() == reference.blocks().size(),
          "checkpoint has " + std::to_string(loaded.blocks().size()) + " parameter blocks, model expects " +
              std::to_string(reference.blocks().size()));
  for (const auto& b : reference.blocks()) {
    require(loaded.contains(b->name), "checkpoint is missing parameter block " + b->name);
    const auto& l = loaded.get(b->name);
    require(l.value.rows() == b->value.rows() && l.value.cols() == b->value.cols(),
            "checkpoint block " + b->name + " has the wrong shape");
  }
}

namespace {

struct SceneResult {
  std::vector<evalmetrics::InstancePrediction> predictions;
  std::vector<evalmetrics::GtInstance> gts;
  std::vector<int> semantic_pred;
  std::vector<int> semantic_truth;
};

void add_gt(SceneResult& r, int scene_index, const scenedata::Scene& scene, const std::vector<int>& ids) {
  std::set<int> present(ids.begin(), ids.end());
  for (int id : present) {
    if (id <= 0 || id == scenedata::kIgnoreLabel) continue;
    evalmetrics::GtInstance gt;
    gt.scene = scene_index;
    gt.class_id = scene.class_of(id);
    gt.mask.resize(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) gt.mask[i] = ids[i] == id;
    r.gts.push_back(std::move(gt));
  }
  r.semantic_truth.resize(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) r.semantic_truth[i] = scene.class_of(ids[i]);
}

// Predictions that copy the ground truth of each token.
void oracle_predictions(SceneResult& r, int scene_index, const scenedata::Scene& scene, const std::vector<int>& ids) {
  std::set<int> present(ids.begin(), ids.end());
  for (int id : present) {
    if (id <= 0) continue;
    evalmetrics::InstancePrediction p;
    p.scene = scene_index;
    p.class_id = scene.class_of(id);
    p.score = 1.0;
    p.mask.resize(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) p.mask[i] = ids[i] == id;
    r.predictions.push_back(std::move(p));
  }
  r.semantic_pred.resize(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) r.semantic_pred[i] = scene.class_of(ids[i]);
}

// Per-point instance ids obtained by transferring one-hot GT features of the
// stride-8 and stride-4 pixels to the points.
std::vector<int> oracle_transfer(const model::Prepared& prepared, const std::vector<scenedata::Frame>& frames, const std::vector<Vec3>& points) {
  const auto& sets = *prepared.tokens;
  std::vector<int> vocab_ids;
  std::map<int, int> column;
  const auto onehot = [&](int stride) {
    const auto& shape = sets[stride == 4 ? 0 : 1].shape;
    std::vector<int> ids;
    for (int v = 0; v < shape.views; ++v) {
      for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) ids.push_back(frames[v].instance_at(y * stride, x * stride));
      }
    }
    for (int id : ids) {
      if (column.emplace(id, static_cast<int>(vocab_ids.size())).second) vocab_ids.push_back(id);
    }
    return ids;
  };
  const std::vector<int> ids8 = onehot(8);
  const std::vector<int> ids4 = onehot(4);
  const auto features = [&](const std::vector<int>& ids) {
    MatrixD f = MatrixD::Zero(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(vocab_ids.size()));
    for (size_t i = 0; i < ids.size(); ++i) f(static_cast<Eigen::Index>(i), column[ids[i]]) = 1.0;
    return f;
  };
  const MatrixD mesh = decoder::transfer_weights(sets[1], points).apply(features(ids8)) +
                       decoder::transfer_weights(sets[0], points).apply(features(ids4));
  std::vector<int> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    Eigen::Index best;
    mesh.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    out[i] = vocab_ids[best];
  }
  return out;
}

std::vector<int> restrict(const std::vector<int>& v, const std::vector<int>& keep) {
  std::vector<int> out;
  out.reserve(keep.size());
  for (int i : keep) out.push_back(v[i]);
  return out;
}

}  // namespace

evalmetrics::EvalReport evaluate(const config::RunConfig& config, const autodiff::ParamStore<float>& params,
                                 const Dataset& data, const EvalOptions& options) {
  require(data.size() >= 1, "evaluate: empty dataset");
  model::ModelConfig mcfg = config.model(data.scenes[0].vocabulary);
  if (config.mode == config::TrainMode::Planar) mcfg.disable_3d_fusion = true;
  if (!options.oracle) check_parameters(params, mcfg);
  autodiff::ParamStore<float> local;
  for (const auto& b : params.blocks()) local.add(b->name, b->value);

  std::vector<SceneResult> results(data.size());
  parallel_for(data.size(), [&](int s) {
    const scenedata::Scene& scene = data.scenes[s];
    const int total = static_cast<int>(scene.frames.size());
    const int count = options.views > 0 ? std::min(options.views, total) : total;
    std::vector<scenedata::Frame> frames(scene.frames.begin(), scene.frames.begin() + count);
    std::vector<const scenedata::Frame*> ptrs;
    for (const auto& f : frames) ptrs.push_back(&f);
    const model::Batch batch = model::make_batch(ptrs, true);
    const bool mesh = options.domain == Domain::Mesh;
    const model::Prepared prepared = model::prepare(batch, mcfg, mesh || options.oracle);
    SceneResult& r = results[s];

    // evaluation domain: token subset (pixels) or labelled points (mesh)
    std::vector<int> keep;
    std::vector<int> ids;
    std::vector<Vec3> points;
    if (mesh) {
      for (const auto& p : scene.surface) points.push_back(p.position);
      const std::vector<int> labels = evalmetrics::labels_to_mesh(frames, points);
      for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= 0) keep.push_back(static_cast<int>(i));
      }
      ids = restrict(labels, keep);
    } else {
      const int per_view = (batch.input.height / 4) * (batch.input.width / 4);
      const int n = options.views > 0 ? per_view : static_cast<int>(batch.token_instances.size());
      for (int i = 0; i < n; ++i) keep.push_back(i);
      ids = restrict(batch.token_instances, keep);
    }
    add_gt(r, s, scene, ids);

    if (options.oracle) {
      if (mesh) {
        oracle_predictions(r, s, scene, restrict(oracle_transfer(prepared, frames, points), keep));
      } else {
        oracle_predictions(r, s, scene, ids);
      }
      return;
    }

    autodiff::Graph<float> g(false);
    nn::Binder<float> bind(g, local);
    const decoder::DecoderOutput out = model::forward(bind, mcfg, prepared, mesh ? &points : nullptr);
    const MatrixD cls = g.value(out.class_logits.back()).cast<double>();
    const MatrixD full = g.value(out.mask_logits.back()).cast<double>();
    MatrixD masks(full.rows(), static_cast<Eigen::Index>(keep.size()));
    for (size_t i = 0; i < keep.size(); ++i) masks.col(static_cast<Eigen::Index>(i)) = full.col(keep[i]);
    for (auto& inst : decoder::instances_from_queries(masks, cls, 1)) {
      evalmetrics::InstancePrediction p;
      p.scene = s;
      p.mask = std::move(inst.mask);
      p.class_id = inst.class_id;
      p.score = inst.score;
      r.predictions.push_back(std::move(p));
    }
    r.semantic_pred = decoder::semantic_from_instances(masks, cls);
  });

  std::vector<evalmetrics::InstancePrediction> predictions;
  std::vector<evalmetrics::GtInstance> gts;
  evalmetrics::SemanticAccumulator semantic;
  for (auto& r : results) {
    predictions.insert(predictions.end(), r.predictions.begin(), r.predictions.end());
    gts.insert(gts.end(), r.gts.begin(), r.gts.end());
    semantic.add(r.semantic_pred, r.semantic_truth);
  }
  evalmetrics::EvalReport report;
  evalmetrics::evaluate_instances(predictions, gts, report);
  semantic.finish(report);
  return report;
}

}  // namespace omniseg::pipeline
