#pragma once

// Shared feature encoder: Conv4, ResNet12 and a small MLP fixture.

#include <cstdint>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/image.hpp"
#include "hts/ops.hpp"
#include "hts/params.hpp"
#include "hts/rng.hpp"
#include "hts/tensor.hpp"

namespace hts {

enum class Architecture { conv4, resnet12, tiny_mlp };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::conv4: return "conv4";
    case Architecture::resnet12: return "resnet12";
    case Architecture::tiny_mlp: return "tiny-mlp";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& name) {
  if (name == "conv4") return Architecture::conv4;
  if (name == "resnet12") return Architecture::resnet12;
  if (name == "tiny-mlp") return Architecture::tiny_mlp;
  throw ConfigError("unknown encoder architecture '" + name +
                    "' (valid: conv4, resnet12, tiny-mlp)");
}

enum class Mode { train, eval };

// Knobs beyond the architecture name. Defaults give the standard backbones;
// smaller values exist for tests.
struct EncoderOptions {
  std::size_t blocks = 4;
  std::vector<std::size_t> widths{};  // per block; empty = architecture default
  std::size_t embedding_dim = 64;
  std::size_t mlp_hidden = 64;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double leaky_slope = 0.1;  // resnet12 activations
};

struct EncoderParams {
  Architecture architecture = Architecture::tiny_mlp;
  ImageShape input_shape{};
  std::size_t output_dim = 0;
  EncoderOptions options{};
  ParamStore store;
};

namespace detail {

inline void add_batch_norm(ParamStore& store, const std::string& prefix, std::size_t channels) {
  store.add_constant(prefix + ".gamma", {channels}, 1.0);
  store.add_constant(prefix + ".beta", {channels}, 0.0);
  store.add_buffer(prefix + ".running_mean", std::vector<double>(channels, 0.0));
  store.add_buffer(prefix + ".running_var", std::vector<double>(channels, 1.0));
}

inline void add_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, Rng& rng) {
  store.add_uniform(name, {out, kernel * kernel * in}, kernel * kernel * in, rng);
}

inline Tensor batch_norm(EncoderParams& enc, const std::string& prefix, const Tensor& x,
                         Mode mode) {
  const Tensor& gamma = enc.store.param(prefix + ".gamma");
  const Tensor& beta = enc.store.param(prefix + ".beta");
  auto& running_mean = enc.store.buffer(prefix + ".running_mean");
  auto& running_var = enc.store.buffer(prefix + ".running_var");
  if (mode == Mode::eval)
    return ops::batch_norm_eval(x, gamma, beta, running_mean, running_var, enc.options.bn_eps);
  ops::ChannelStats stats;
  Tensor y = ops::batch_norm_train(x, gamma, beta, enc.options.bn_eps, &stats);
  const double rows = static_cast<double>(x.numel() / x.shape().back());
  const double unbias = rows > 1.0 ? rows / (rows - 1.0) : 1.0;
  const double m = enc.options.bn_momentum;
  for (std::size_t k = 0; k < running_mean.size(); ++k) {
    running_mean[k] = (1.0 - m) * running_mean[k] + m * stats.mean[k];
    running_var[k] = (1.0 - m) * running_var[k] + m * stats.var[k] * unbias;
  }
  return y;
}

inline std::vector<std::size_t> default_widths(Architecture a, std::size_t blocks) {
  std::vector<std::size_t> w;
  const std::vector<std::size_t> resnet{64, 160, 320, 640};
  for (std::size_t b = 0; b < blocks; ++b)
    w.push_back(a == Architecture::resnet12 ? resnet[std::min<std::size_t>(b, 3)] : 64);
  return w;
}

}  // namespace detail

inline EncoderParams init_encoder(Architecture arch, ImageShape input_shape, std::uint64_t seed,
                                  EncoderOptions options = {}) {
  EncoderParams enc;
  enc.architecture = arch;
  enc.input_shape = input_shape;
  enc.options = options;
  if (input_shape.numel() == 0) throw ConfigError("encoder input shape is empty");
  Rng rng(derive_seed(seed, 0xE4C0DE));
  auto& store = enc.store;

  if (arch == Architecture::tiny_mlp) {
    const std::size_t in = input_shape.numel(), hid = options.mlp_hidden;
    store.add_uniform("fc1.weight", {hid, in}, in, rng);
    store.add_uniform("fc1.bias", {hid}, in, rng);
    store.add_uniform("fc2.weight", {hid, hid}, hid, rng);
    store.add_uniform("fc2.bias", {hid}, hid, rng);
    store.add_uniform("fc3.weight", {options.embedding_dim, hid}, hid, rng);
    store.add_uniform("fc3.bias", {options.embedding_dim}, hid, rng);
    enc.output_dim = options.embedding_dim;
    return enc;
  }

  if (options.blocks < 1) throw ConfigError("encoder needs at least one block");
  const std::size_t min_side = std::size_t{1} << options.blocks;
  if (input_shape.height < min_side || input_shape.width < min_side)
    throw ConfigError("input " + input_shape.str() + " is too small for " +
                      std::to_string(options.blocks) + " pooling stages (need >= " +
                      std::to_string(min_side) + ")");
  if (enc.options.widths.empty()) enc.options.widths = detail::default_widths(arch, options.blocks);
  if (enc.options.widths.size() != options.blocks)
    throw ConfigError("encoder widths list must have one entry per block");

  std::size_t in = input_shape.channels;
  for (std::size_t b = 0; b < options.blocks; ++b) {
    const std::size_t out = enc.options.widths[b];
    const std::string p = "block" + std::to_string(b + 1);
    if (arch == Architecture::conv4) {
      detail::add_conv(store, p + ".conv.weight", in, out, 3, rng);
      detail::add_batch_norm(store, p + ".bn", out);
    } else {
      detail::add_conv(store, p + ".conv1.weight", in, out, 3, rng);
      detail::add_batch_norm(store, p + ".bn1", out);
      detail::add_conv(store, p + ".conv2.weight", out, out, 3, rng);
      detail::add_batch_norm(store, p + ".bn2", out);
      detail::add_conv(store, p + ".conv3.weight", out, out, 3, rng);
      detail::add_batch_norm(store, p + ".bn3", out);
      detail::add_conv(store, p + ".shortcut.weight", in, out, 1, rng);
      detail::add_batch_norm(store, p + ".shortcut_bn", out);
    }
    in = out;
  }
  store.add_uniform("head.fc.weight", {options.embedding_dim, in}, in, rng);
  store.add_uniform("head.fc.bias", {options.embedding_dim}, in, rng);
  detail::add_batch_norm(store, "head.bn", options.embedding_dim);
  enc.output_dim = options.embedding_dim;
  return enc;
}

inline EncoderParams init_encoder(const std::string& arch, ImageShape input_shape,
                                  std::uint64_t seed, EncoderOptions options = {}) {
  return init_encoder(parse_architecture(arch), input_shape, seed, options);
}

// images: (N, H, W, C) -> (N, output_dim). Train mode normalizes with batch
// statistics and updates the running averages; eval mode is a pure function.
inline Tensor encode(EncoderParams& enc, const Tensor& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != enc.input_shape.height ||
      images.dim(2) != enc.input_shape.width || images.dim(3) != enc.input_shape.channels)
    throw ShapeError("encoder expects (N, " + enc.input_shape.str() + ") images, got " +
                     shape_str(images.shape()));
  const std::size_t n = images.dim(0);
  auto& store = enc.store;

  if (enc.architecture == Architecture::tiny_mlp) {
    Tensor x = ops::reshape(images, {n, enc.input_shape.numel()});
    x = ops::relu(ops::linear(x, store.param("fc1.weight"), store.param("fc1.bias")));
    x = ops::relu(ops::linear(x, store.param("fc2.weight"), store.param("fc2.bias")));
    return ops::linear(x, store.param("fc3.weight"), store.param("fc3.bias"));
  }

  Tensor x = images;
  const double slope = enc.options.leaky_slope;
  for (std::size_t b = 0; b < enc.options.blocks; ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    if (enc.architecture == Architecture::conv4) {
      x = ops::conv2d(x, store.param(p + ".conv.weight"), 3);
      x = ops::relu(detail::batch_norm(enc, p + ".bn", x, mode));
    } else {
      Tensor y = ops::conv2d(x, store.param(p + ".conv1.weight"), 3);
      y = ops::leaky_relu(detail::batch_norm(enc, p + ".bn1", y, mode), slope);
      y = ops::conv2d(y, store.param(p + ".conv2.weight"), 3);
      y = ops::leaky_relu(detail::batch_norm(enc, p + ".bn2", y, mode), slope);
      y = ops::conv2d(y, store.param(p + ".conv3.weight"), 3);
      y = detail::batch_norm(enc, p + ".bn3", y, mode);
      Tensor sc = ops::conv2d(x, store.param(p + ".shortcut.weight"), 1);
      sc = detail::batch_norm(enc, p + ".shortcut_bn", sc, mode);
      x = ops::leaky_relu(ops::add(y, sc), slope);
    }
    x = ops::max_pool2(x);
  }
  x = ops::global_avg_pool(x);
  x = ops::linear(x, store.param("head.fc.weight"), store.param("head.fc.bias"));
  return detail::batch_norm(enc, "head.bn", x, mode);
}

// Read-only evaluation-mode encoding.
inline Tensor encode_eval(const EncoderParams& enc, const Tensor& images) {
  // Eval mode never writes to the store.
  return encode(const_cast<EncoderParams&>(enc), images, Mode::eval);
}

}  // namespace hts
