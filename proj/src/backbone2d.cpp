#include "omniseg/backbone2d.hpp"

namespace omniseg::backbone2d {

namespace {

std::string stage_name(int stage) { return "backbone.s" + std::to_string(stage + 1); }

void register_conv(nn::Initializer& init, const std::string& prefix, int cin, int cout) {
  init.kaiming(prefix + ".w", 9 * cin, cout, 9 * cin);
  init.constant(prefix + ".g", 1, cout, 1.0);
  init.zeros(prefix + ".o", 1, cout);
}

// 3x3 convolution followed by the per-channel affine normalization.
template <typename T>
Var conv_affine(nn::Binder<T>& bind, Var x, const MapShape& in, const std::string& prefix, int stride,
                MapShape* out) {
  auto& g = bind.graph();
  Var y = g.conv2d(x, in, bind(prefix + ".w"), Var{}, 3, stride, 1, out);
  return g.add_row(g.mul_row(y, bind(prefix + ".g")), bind(prefix + ".o"));
}

}  // namespace

void register_params(nn::Initializer& init, const BackboneConfig& config) {
  register_conv(init, "backbone.stem", 3, config.width);
  int cin = config.width;
  for (int s = 0; s < 4; ++s) {
    const int c = config.channels(s);
    register_conv(init, stage_name(s) + ".down", cin, c);
    register_conv(init, stage_name(s) + ".res1", c, c);
    register_conv(init, stage_name(s) + ".res2", c, c);
    cin = c;
  }
}

template <typename T>
FeaturePyramid forward(nn::Binder<T>& bind, const BackboneConfig& config, Var rgb, const MapShape& input,
                       const StageHook& hook) {
  require(input.height % 32 == 0 && input.width % 32 == 0,
          "backbone: image size " + std::to_string(input.height) + "x" + std::to_string(input.width) +
              " is not a multiple of 32");
  auto& g = bind.graph();
  require(g.rows(rgb) == input.pixels() && g.cols(rgb) == 3, "backbone: input must be (V*H*W) x 3");
  (void)config;
  FeaturePyramid pyramid;
  MapShape shape;
  Var x = g.relu(conv_affine(bind, rgb, input, "backbone.stem", 2, &shape));
  for (int s = 0; s < 4; ++s) {
    const std::string p = stage_name(s);
    MapShape down;
    x = g.relu(conv_affine(bind, x, shape, p + ".down", 2, &down));
    shape = down;
    Var h = g.relu(conv_affine(bind, x, shape, p + ".res1", 1, nullptr));
    h = conv_affine(bind, h, shape, p + ".res2", 1, nullptr);
    x = g.relu(g.add(x, h));
    if (hook) x = hook(s, x, shape);
    pyramid.maps[s] = x;
    pyramid.shapes[s] = shape;
    pyramid.channels[s] = g.cols(x);
  }
  return pyramid;
}

MatrixD normalize_rgb(const std::vector<const std::vector<std::uint8_t>*>& views, int height, int width) {
  const int pixels = height * width;
  MatrixD out(static_cast<Eigen::Index>(views.size()) * pixels, 3);
  for (size_t v = 0; v < views.size(); ++v) {
    require(static_cast<int>(views[v]->size()) == pixels * 3, "normalize_rgb: view size mismatch");
    for (int i = 0; i < pixels; ++i) {
      for (int c = 0; c < 3; ++c) {
        out(static_cast<Eigen::Index>(v) * pixels + i, c) = ((*views[v])[static_cast<size_t>(i) * 3 + c] / 255.0 - 0.5) * 4.0;
      }
    }
  }
  return out;
}

template FeaturePyramid forward(nn::Binder<float>&, const BackboneConfig&, Var, const MapShape&, const StageHook&);
template FeaturePyramid forward(nn::Binder<double>&, const BackboneConfig&, Var, const MapShape&, const StageHook&);

}  // namespace omniseg::backbone2d
