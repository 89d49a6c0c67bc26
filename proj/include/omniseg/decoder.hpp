#pragma once

#include <array>
#include <string>
#include <vector>

#include "omniseg/backbone2d.hpp"
#include "omniseg/fusion3d.hpp"

// Multi-scale deformable fusion of the three coarsest pyramid levels,
// upsampling to stride 4 with a skip connection, and a query decoder that
// predicts one mask and one class distribution per learned query.
namespace omniseg::decoder {

using autodiff::MapShape;
using autodiff::Var;

inline constexpr int kLevels = 3;  // strides 32, 16, 8

struct DecoderConfig {
  int width = 32;
  int queries = 20;
  int rounds = 3;
  int heads = 4;
  int points = 4;
  int deform_layers = 1;
  /// Vocabulary classes including background; the no-object class is appended.
  int classes = 5;
  bool open_vocabulary = false;
  std::vector<std::string> class_names;  // used by the open-vocabulary head
  /// Zero the output projections of the query attention blocks.
  bool zero_init_attention = false;
};

/// Word tokens of the class names in vocabulary order with per-class spans.
struct Prompt {
  std::vector<std::string> words;        // distinct words, table order
  std::vector<int> tokens;               // word id per prompt token
  std::vector<std::pair<int, int>> spans;  // per class: [begin, end) into tokens

  static Prompt from_class_names(const std::vector<std::string>& names);
  /// tokens x (classes + 1) averaging matrix; the last column stays zero.
  MatrixD span_average(int classes) const;
};

void register_params(nn::Initializer& init, const DecoderConfig& config, const std::array<int, 4>& backbone_channels,
                     const fusion3d::FusionConfig& fusion);

struct DecoderInputs {
  bool volumetric = false;
  const backbone2d::FeaturePyramid* pyramid = nullptr;
  /// Token sets for the four backbone stages (volumetric mode only).
  const std::array<fusion3d::Token3DSet, 4>* tokens = nullptr;
  /// When set, masks are predicted over these points instead of stride-4 pixels.
  const std::vector<Vec3>* mesh = nullptr;
};

struct DecoderOutput {
  std::vector<Var> class_logits;  // per round: queries x (classes + 1)
  std::vector<Var> mask_logits;   // per round: queries x mask tokens
  Var mask_tokens;                // tokens x width
  std::array<Var, kLevels> fused;  // strides 32, 16, 8 after cross-scale fusion
};

template <typename T>
DecoderOutput forward(nn::Binder<T>& bind, const DecoderConfig& config, const fusion3d::FusionConfig& fusion,
                      const DecoderInputs& inputs);

/// Sine/cosine features of normalized pixel coordinates, (V*h*w) x width.
MatrixD fourier_encoding(const MapShape& shape, int width);

/// Bilinear 2x upsampling weights from `coarse` to a map twice its size
/// (fine pixel x samples coarse column x / 2).
SparseRows upsample_weights_2d(const MapShape& coarse);

/// Stride-4 weights from the stride-8 map: trilinear in 3D for lifted pixels,
/// bilinear for the rest.
SparseRows upsample_weights_3d(const fusion3d::Token3DSet& coarse, const fusion3d::Token3DSet& fine);

/// Trilinear weights from the lifted pixels of `source` to arbitrary points, over map rows.
SparseRows transfer_weights(const fusion3d::Token3DSet& source, const std::vector<Vec3>& points);

/// Per-token class: argmax over classes of sum_q p(class | q) * sigmoid(mask logit).
std::vector<int> semantic_from_instances(const MatrixD& mask_logits, const MatrixD& class_logits);

struct InstanceOutput {
  std::vector<char> mask;
  int class_id = 0;
  double score = 0.0;
};

/// One prediction per query: its most likely class among `first_class`..classes-1,
/// scored by class probability times the mean sigmoid over the positive mask.
/// Empty masks are dropped.
std::vector<InstanceOutput> instances_from_queries(const MatrixD& mask_logits, const MatrixD& class_logits,
                                                   int first_class);

MatrixD softmax_rows(const MatrixD& logits);

}  // namespace omniseg::decoder
