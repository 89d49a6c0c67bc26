#include "omniseg/decoder.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace omniseg::decoder {

namespace {

// Pyramid stage feeding decoder level l (strides 32, 16, 8).
constexpr std::array<int, kLevels> kLevelStage{3, 2, 1};

std::string round_prefix(int r) { return "dec.r" + std::to_string(r); }

void register_attention(nn::Initializer& init, const std::string& prefix, int width, bool zero_out) {
  init.layer_norm(prefix + ".ln", width);
  init.linear(prefix + ".q", width, width);
  init.linear(prefix + ".k", width, width);
  init.linear(prefix + ".v", width, width);
  init.linear(prefix + ".o", width, width, zero_out);
}

// Pre-norm residual attention of the queries over `keys`/`values` (with
// `key_pos` added to the keys only).
template <typename T>
Var attend(nn::Binder<T>& bind, const std::string& prefix, Var queries, Var query_pos, Var keys, Var key_pos,
           Var values, int heads) {
  auto& g = bind.graph();
  const Var h = nn::layer_norm(bind, queries, prefix + ".ln");
  const Var q = nn::linear(bind, g.add(h, query_pos), prefix + ".q");
  const Var kin = key_pos.valid() ? g.add(keys, key_pos) : keys;
  const Var k = nn::linear(bind, kin, prefix + ".k");
  const Var v = nn::linear(bind, values, prefix + ".v");
  return g.add(queries, nn::linear(bind, g.attention(q, k, v, heads), prefix + ".o"));
}

}  // namespace

Prompt Prompt::from_class_names(const std::vector<std::string>& names) {
  Prompt p;
  std::map<std::string, int> ids;
  for (const std::string& name : names) {
    std::istringstream words(name);
    std::string w;
    const int begin = static_cast<int>(p.tokens.size());
    while (words >> w) {
      auto [it, inserted] = ids.emplace(w, static_cast<int>(p.words.size()));
      if (inserted) p.words.push_back(w);
      p.tokens.push_back(it->second);
    }
    require(static_cast<int>(p.tokens.size()) > begin, "prompt: empty class name");
    p.spans.emplace_back(begin, static_cast<int>(p.tokens.size()));
  }
  return p;
}

MatrixD Prompt::span_average(int classes) const {
  require(static_cast<int>(spans.size()) == classes, "prompt: span count does not match class count");
  MatrixD s = MatrixD::Zero(static_cast<Eigen::Index>(tokens.size()), classes + 1);
  for (int c = 0; c < classes; ++c) {
    const auto [b, e] = spans[c];
    for (int t = b; t < e; ++t) s(t, c) = 1.0 / (e - b);
  }
  return s;
}

void register_params(nn::Initializer& init, const DecoderConfig& config, const std::array<int, 4>& backbone_channels,
                     const fusion3d::FusionConfig& fusion) {
  const int d = config.width;
  require(d % 4 == 0 && d % config.heads == 0, "decoder: width must be divisible by 4 and by the head count");
  for (int l = 0; l < kLevels; ++l) {
    init.linear("dec.in" + std::to_string(l), backbone_channels[kLevelStage[l]], d);
    init.normal("dec.level" + std::to_string(l), 1, d, 1.0);
  }
  for (int i = 0; i < config.deform_layers; ++i) {
    const std::string p = "dec.deform" + std::to_string(i);
    const int samples = kLevels * config.points;
    init.layer_norm(p + ".ln", d);
    init.linear(p + ".v", d, d);
    init.linear(p + ".off", d, samples * 2, true);
    init.linear(p + ".att", d, samples, true);
    init.linear(p + ".o", d, d);
    init.layer_norm(p + ".ln2", d);
    init.mlp(p + ".ffn", d, 2 * d, d);
  }
  for (int l = 0; l < kLevels; ++l) fusion3d::register_params(init, "dec.f3d" + std::to_string(l), d, fusion);
  init.linear("dec.skip", backbone_channels[0], d);
  init.linear("dec.maskfeat", d, d);
  init.mlp("dec.pos3d", 3, d, d);

  init.normal("dec.query", config.queries, d, 0.02);
  init.normal("dec.query_pos", config.queries, d, 1.0);
  for (int r = 0; r < config.rounds; ++r) {
    const std::string p = round_prefix(r);
    if (config.open_vocabulary) register_attention(init, p + ".prompt", d, config.zero_init_attention);
    register_attention(init, p + ".cross", d, config.zero_init_attention);
    register_attention(init, p + ".self", d, config.zero_init_attention);
    init.layer_norm(p + ".ffn_ln", d);
    init.mlp(p + ".ffn", d, 2 * d, d, config.zero_init_attention);
  }
  init.layer_norm("dec.out_ln", d);
  init.mlp("dec.mask", d, d, d);
  if (config.open_vocabulary) {
    const Prompt prompt = Prompt::from_class_names(config.class_names);
    require(static_cast<int>(prompt.spans.size()) == config.classes, "decoder: class names do not match class count");
    init.normal("dec.words", static_cast<int>(prompt.words.size()), d, 1.0);
    init.linear("dec.cls_emb", d, d);
    init.zeros("dec.noobj", 1, 1);
  } else {
    init.mlp("dec.cls", d, d, config.classes + 1);
  }
}

MatrixD fourier_encoding(const MapShape& shape, int width) {
  require(width % 4 == 0, "fourier_encoding: width must be divisible by 4");
  const int bands = width / 4;
  MatrixD out(shape.pixels(), width);
  for (int v = 0; v < shape.views; ++v) {
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const int row = (v * shape.height + y) * shape.width + x;
        const double cy = (y + 0.5) / shape.height;
        const double cx = (x + 0.5) / shape.width;
        for (int b = 0; b < bands; ++b) {
          const double f = std::numbers::pi * (b + 1);
          out(row, 4 * b) = std::sin(f * cy);
          out(row, 4 * b + 1) = std::cos(f * cy);
          out(row, 4 * b + 2) = std::sin(f * cx);
          out(row, 4 * b + 3) = std::cos(f * cx);
        }
      }
    }
  }
  return out;
}

SparseRows upsample_weights_2d(const MapShape& coarse) {
  SparseRows w;
  w.cols = coarse.pixels();
  const int h = coarse.height * 2;
  const int wd = coarse.width * 2;
  for (int v = 0; v < coarse.views; ++v) {
    const int base = v * coarse.pixels_per_view();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        const auto taps = geometry::bilinear_taps(coarse.height, coarse.width, x / 2.0, y / 2.0);
        for (int t = 0; t < 4; ++t) {
          if (taps.weight[t] != 0.0) w.push(base + taps.index[t], taps.weight[t]);
        }
        w.end_row();
      }
    }
  }
  return w;
}

SparseRows transfer_weights(const fusion3d::Token3DSet& source, const std::vector<Vec3>& points) {
  SparseRows w = geometry::trilinear_weights(source.point_positions, source.voxel_size, points);
  for (int& i : w.index) i = source.point_rows[i];
  w.cols = source.shape.pixels();
  return w;
}

SparseRows upsample_weights_3d(const fusion3d::Token3DSet& coarse, const fusion3d::Token3DSet& fine) {
  require(fine.shape.height == coarse.shape.height * 2 && fine.shape.width == coarse.shape.width * 2 &&
              fine.shape.views == coarse.shape.views,
          "upsample: fine map must be twice the coarse map");
  const SparseRows planar = upsample_weights_2d(coarse.shape);
  std::vector<Vec3> queries;
  for (int r = 0; r < fine.shape.pixels(); ++r) {
    if (fine.pixel_valid[r]) queries.push_back(fine.pixel_positions[r]);
  }
  const SparseRows spatial = transfer_weights(coarse, queries);
  SparseRows w;
  w.cols = coarse.shape.pixels();
  int q = 0;
  for (int r = 0; r < fine.shape.pixels(); ++r) {
    const SparseRows& src = fine.pixel_valid[r] ? spatial : planar;
    const int row = fine.pixel_valid[r] ? q++ : r;
    for (int i = src.offsets[row]; i < src.offsets[row + 1]; ++i) w.push(src.index[i], src.weight[i]);
    w.end_row();
  }
  return w;
}

template <typename T>
DecoderOutput forward(nn::Binder<T>& bind, const DecoderConfig& config, const fusion3d::FusionConfig& fusion,
                      const DecoderInputs& inputs) {
  auto& g = bind.graph();
  require(inputs.pyramid != nullptr, "decoder: missing feature pyramid");
  const auto& pyr = *inputs.pyramid;
  const bool volumetric = inputs.volumetric;
  require(!volumetric || inputs.tokens != nullptr, "decoder: volumetric mode needs token sets");
  require(inputs.mesh == nullptr || inputs.tokens != nullptr, "decoder: mesh prediction needs token sets");
  const int d = config.width;

  // cross-scale deformable fusion over the three coarsest levels
  std::array<MapShape, kLevels> shapes;
  std::array<Var, kLevels> level;
  for (int l = 0; l < kLevels; ++l) {
    shapes[l] = pyr.shapes[kLevelStage[l]];
    level[l] = g.add_row(nn::linear(bind, pyr.maps[kLevelStage[l]], "dec.in" + std::to_string(l)),
                         bind("dec.level" + std::to_string(l)));
  }
  for (int layer = 0; layer < config.deform_layers; ++layer) {
    const std::string p = "dec.deform" + std::to_string(layer);
    auto spec = std::make_shared<typename autodiff::Graph<T>::DeformSpec>();
    spec->points = config.points;
    for (int l = 0; l < kLevels; ++l) {
      spec->levels.push_back(shapes[l]);
      spec->level_scale.push_back({shapes[l].width / 2.0, shapes[l].height / 2.0});
    }
    for (int a = 0; a < kLevels; ++a) {
      const MapShape& s = shapes[a];
      for (int v = 0; v < s.views; ++v) {
        for (int y = 0; y < s.height; ++y) {
          for (int x = 0; x < s.width; ++x) {
            spec->query_view.push_back(v);
            for (int b = 0; b < kLevels; ++b) {
              const double ratio = static_cast<double>(shapes[b].width) / s.width;
              spec->reference.push_back(x * ratio);
              spec->reference.push_back(y * ratio);
            }
          }
        }
      }
    }
    const Var all = g.concat_rows({level[0], level[1], level[2]});
    const Var h = nn::layer_norm(bind, all, p + ".ln");
    std::vector<Var> values;
    for (int l = 0; l < kLevels; ++l) values.push_back(nn::linear(bind, level[l], p + ".v"));
    const Var offsets = nn::linear(bind, h, p + ".off");
    const Var weights = g.softmax_rows(nn::linear(bind, h, p + ".att"));
    const Var sampled = g.deformable_sample(values, offsets, weights, spec);
    Var x = g.add(all, nn::linear(bind, sampled, p + ".o"));
    x = g.add(x, nn::mlp(bind, nn::layer_norm(bind, x, p + ".ln2"), p + ".ffn"));
    int start = 0;
    for (int l = 0; l < kLevels; ++l) {
      level[l] = g.slice_rows(x, start, shapes[l].pixels());
      start += shapes[l].pixels();
    }
  }
  if (volumetric) {
    for (int l = 0; l < kLevels; ++l) {
      level[l] = fusion3d::fusion_stage(bind, "dec.f3d" + std::to_string(l), level[l],
                                        (*inputs.tokens)[kLevelStage[l]], fusion);
    }
  }

  DecoderOutput out;
  out.fused = level;

  // stride-4 mask tokens
  const Var skip = nn::linear(bind, pyr.maps[0], "dec.skip");
  Var tokens;
  if (inputs.mesh != nullptr) {
    const auto& sets = *inputs.tokens;
    auto from8 = std::make_shared<const SparseRows>(transfer_weights(sets[1], *inputs.mesh));
    auto from4 = std::make_shared<const SparseRows>(transfer_weights(sets[0], *inputs.mesh));
    tokens = g.add(g.sparse_mix(from8, level[2]), g.sparse_mix(from4, skip));
  } else {
    auto up = std::make_shared<const SparseRows>(volumetric ? upsample_weights_3d((*inputs.tokens)[1], (*inputs.tokens)[0])
                                                            : upsample_weights_2d(shapes[2]));
    tokens = g.add(g.sparse_mix(up, level[2]), skip);
  }
  out.mask_tokens = nn::linear(bind, tokens, "dec.maskfeat");

  // positional encodings of the attended tokens
  std::array<Var, kLevels> pos;
  for (int l = 0; l < kLevels; ++l) {
    if (volumetric) {
      const auto& set = (*inputs.tokens)[kLevelStage[l]];
      MatrixD xyz(set.shape.pixels(), 3);
      for (int r = 0; r < set.shape.pixels(); ++r) xyz.row(r) = set.pixel_positions[r].transpose();
      pos[l] = nn::mlp(bind, g.constant(xyz.cast<T>()), "dec.pos3d");
    } else {
      pos[l] = g.constant(fourier_encoding(shapes[l], d).cast<T>());
    }
  }

  Var prompt_tokens;
  MatrixD span;
  if (config.open_vocabulary) {
    const Prompt prompt = Prompt::from_class_names(config.class_names);
    auto gather = std::make_shared<SparseRows>();
    gather->cols = static_cast<int>(prompt.words.size());
    for (int w : prompt.tokens) {
      gather->push(w, 1.0);
      gather->end_row();
    }
    prompt_tokens = g.sparse_mix(std::shared_ptr<const SparseRows>(gather), bind("dec.words"));
    span = prompt.span_average(config.classes);
  }

  Var q = bind("dec.query");
  const Var qpos = bind("dec.query_pos");
  for (int r = 0; r < config.rounds; ++r) {
    const std::string p = round_prefix(r);
    const int l = r % kLevels;
    if (config.open_vocabulary) q = attend(bind, p + ".prompt", q, qpos, prompt_tokens, Var{}, prompt_tokens, config.heads);
    q = attend(bind, p + ".cross", q, qpos, level[l], pos[l], level[l], config.heads);
    const Var h = nn::layer_norm(bind, q, p + ".self.ln");
    q = g.add(q, nn::linear(bind,
                            g.attention(nn::linear(bind, g.add(h, qpos), p + ".self.q"),
                                        nn::linear(bind, g.add(h, qpos), p + ".self.k"),
                                        nn::linear(bind, h, p + ".self.v"), config.heads),
                            p + ".self.o"));
    q = g.add(q, nn::mlp(bind, nn::layer_norm(bind, q, p + ".ffn_ln"), p + ".ffn"));

    const Var hq = nn::layer_norm(bind, q, "dec.out_ln");
    Var cls;
    if (config.open_vocabulary) {
      const Var emb = nn::linear(bind, hq, "dec.cls_emb");
      const Var token_logits = g.matmul_nt(emb, prompt_tokens);
      Matrix<T> last = Matrix<T>::Zero(1, config.classes + 1);
      last(0, config.classes) = T(1);
      const Var noobj = g.matmul(bind("dec.noobj"), g.constant(std::move(last)));
      cls = g.add_row(g.matmul(token_logits, g.constant(span.cast<T>())), noobj);
    } else {
      cls = nn::mlp(bind, hq, "dec.cls");
    }
    out.class_logits.push_back(cls);
    out.mask_logits.push_back(g.matmul_nt(nn::mlp(bind, hq, "dec.mask"), out.mask_tokens));
  }
  return out;
}

MatrixD softmax_rows(const MatrixD& logits) {
  MatrixD p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double mx = p.row(r).maxCoeff();
    p.row(r) = (p.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

std::vector<int> semantic_from_instances(const MatrixD& mask_logits, const MatrixD& class_logits) {
  require(mask_logits.rows() == class_logits.rows(), "semantic_from_instances: query count mismatch");
  const MatrixD probs = softmax_rows(class_logits);
  const int classes = static_cast<int>(class_logits.cols()) - 1;
  const MatrixD sig = (1.0 / (1.0 + (-mask_logits.array()).exp())).matrix();
  // (classes x tokens) scores
  const MatrixD scores = probs.leftCols(classes).transpose() * sig;
  std::vector<int> labels(mask_logits.cols(), 0);
  for (Eigen::Index t = 0; t < scores.cols(); ++t) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (scores(c, t) > scores(best, t)) best = c;
    }
    labels[t] = best;
  }
  return labels;
}

std::vector<InstanceOutput> instances_from_queries(const MatrixD& mask_logits, const MatrixD& class_logits,
                                                   int first_class) {
  const MatrixD probs = softmax_rows(class_logits);
  const int classes = static_cast<int>(class_logits.cols()) - 1;
  std::vector<InstanceOutput> out;
  for (Eigen::Index q = 0; q < mask_logits.rows(); ++q) {
    int best = first_class;
    for (int c = first_class + 1; c < classes; ++c) {
      if (probs(q, c) > probs(q, best)) best = c;
    }
    InstanceOutput inst;
    inst.class_id = best;
    inst.mask.assign(mask_logits.cols(), 0);
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index t = 0; t < mask_logits.cols(); ++t) {
      if (mask_logits(q, t) > 0.0) {
        inst.mask[t] = 1;
        sum += 1.0 / (1.0 + std::exp(-mask_logits(q, t)));
        ++count;
      }
    }
    if (count == 0) continue;
    inst.score = probs(q, best) * sum / count;
    out.push_back(std::move(inst));
  }
  return out;
}

template DecoderOutput forward(nn::Binder<float>&, const DecoderConfig&, const fusion3d::FusionConfig&,
                               const DecoderInputs&);
template DecoderOutput forward(nn::Binder<double>&, const DecoderConfig&, const fusion3d::FusionConfig&,
                               const DecoderInputs&);

}  // namespace omniseg::decoder
