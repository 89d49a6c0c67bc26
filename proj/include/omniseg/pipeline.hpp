#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "omniseg/checkpoint.hpp"
#include "omniseg/config.hpp"
#include "omniseg/evalmetrics.hpp"
#include "omniseg/learn.hpp"
#include "omniseg/model.hpp"

// Datasets on disk, the training loop and model evaluation.
namespace omniseg::pipeline {

struct Dataset {
  std::vector<std::string> names;
  std::vector<scenedata::Scene> scenes;

  int size() const { return static_cast<int>(scenes.size()); }
};

/// Writes `count` scenes plus manifest.txt (`name split` lines, 75/25 train/test).
void synthesize(const std::filesystem::path& out, int count, std::uint64_t seed, const scenedata::SceneConfig& scene,
                double hole_rate = 0.0);

/// Loads the scenes of one split ("train", "test" or "all") listed in manifest.txt.
Dataset load_dataset(const std::filesystem::path& data, const std::string& split);

/// Set-loss targets over the stride-4 tokens of a batch: one segment per object
/// instance plus one background segment; ignore-labelled tokens are excluded.
learn::Targets make_targets(const model::Batch& batch, const scenedata::Scene& scene);

struct IterationLog {
  int iteration = 0;
  bool volumetric = false;
  learn::LossTerms terms;   // final refinement round, batch mean
  double grad_norm = 0.0;
};

struct TrainHooks {
  /// Called after each logged iteration with the formatted metrics.log line.
  std::function<void(const std::string&)> log_line;
  /// Called for periodic checkpoints (iteration count completed).
  std::function<void(long, const autodiff::ParamStore<float>&)> checkpoint;
  /// Optional evaluation appended to log lines every eval_every iterations.
  std::function<evalmetrics::EvalReport(const autodiff::ParamStore<float>&)> evaluate;
};

/// Trains from scratch (or from `init` when given). Deterministic in the config seed.
autodiff::ParamStore<float> train(const config::RunConfig& config, const Dataset& data, const TrainHooks& hooks = {},
                                  std::vector<IterationLog>* history = nullptr,
                                  const autodiff::ParamStore<float>* init = nullptr);

/// Loss of one batch with gradients accumulated into `params`.
template <typename T>
learn::LossTerms batch_loss(autodiff::ParamStore<T>& params, const model::ModelConfig& model, const model::Batch& batch,
                            const learn::Targets& targets, const learn::LossWeights& weights, double scale,
                            bool backward);

enum class Domain { Pixels, Mesh };

struct EvalOptions {
  Domain domain = Domain::Pixels;
  /// 0 = all views and all tokens; K > 0 = views 0..K-1 as context, scored on view 0.
  int views = 0;
  /// Score ground-truth-derived predictions instead of the model.
  bool oracle = false;
};

evalmetrics::EvalReport evaluate(const config::RunConfig& config, const autodiff::ParamStore<float>& params,
                                 const Dataset& data, const EvalOptions& options);

/// Checks that `loaded` holds exactly the blocks (names and shapes) the model registers.
void check_parameters(const autodiff::ParamStore<float>& loaded, const model::ModelConfig& model);

}  // namespace omniseg::pipeline
