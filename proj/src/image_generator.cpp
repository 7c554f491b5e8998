#include "hiergen/image_generator.hpp"

#include <cmath>

#include "hiergen/error.hpp"

namespace hiergen {

namespace F = torch::nn::functional;

torch::Tensor gate_layout(const torch::Tensor& layout_feature, const torch::Tensor& gate) {
  if (layout_feature.dim() != 4 || gate.dim() != 2 || gate.size(0) != layout_feature.size(0) ||
      gate.size(1) != layout_feature.size(1)) {
    throw Error(ErrorCode::kShapeMismatch, "gate must be [N, d] for a layout feature [N, d, h, w]");
  }
  return layout_feature * torch::sigmoid(nn::spatial_tile(gate, layout_feature.size(2), layout_feature.size(3)));
}

namespace {
torch::Tensor resize_map(const torch::Tensor& m, std::int64_t size) {
  if (m.size(2) == size) return m;
  // Nearest keeps the map binary.
  return F::interpolate(m, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{size, size}).mode(torch::kNearest));
}
}  // namespace

ImageGeneratorImpl::ImageGeneratorImpl(std::int64_t num_classes, std::int64_t text_dim, std::int64_t image_size,
                                       const ImageConfig& config)
    : num_classes_(num_classes),
      text_dim_(text_dim),
      image_size_(image_size),
      noise_dim_(config.noise_dim),
      attention_(config.attention) {
  if (num_classes < 1 || text_dim < 1 || config.num_down < 1 || config.feature_dim < 1 || config.base_channels < 1 ||
      config.noise_dim < 0 || config.background_dim < 0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid image generator configuration");
  }
  if (image_size % (1 << config.num_down) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be divisible by 2^num_down", "image.num_down");
  }
  std::int64_t ch = num_classes;
  for (int i = 0; i < config.num_down; ++i) {
    const std::int64_t out = i + 1 == config.num_down ? config.feature_dim
                                                      : static_cast<std::int64_t>(config.base_channels) << i;
    down_.push_back(register_module("down" + std::to_string(i), nn::build_block(nn::BlockKind::kDown, {ch, out})));
    ch = out;
  }
  const std::int64_t d = config.feature_dim;
  gate_ = register_module("gate", torch::nn::Linear(text_dim, d));
  background_ = register_module("background", torch::nn::Linear(text_dim, std::max(1, config.background_dim)));
  combine_ = register_module(
      "combine", torch::nn::Conv2d(torch::nn::Conv2dOptions(d + std::max(1, config.background_dim) + noise_dim_, d, 1)));
  for (int i = 0; i < config.num_residual; ++i) {
    residual_.push_back(register_module("res" + std::to_string(i), nn::build_block(nn::BlockKind::kResidual, {d, d})));
  }
  ch = d;
  for (int i = 0; i < config.num_down; ++i) {
    const std::int64_t out = static_cast<std::int64_t>(config.base_channels) << (config.num_down - 1 - i);
    stages_.push_back(register_module("stage" + std::to_string(i),
                                      torch::nn::Conv2d(torch::nn::Conv2dOptions(ch + num_classes, out, 3).padding(1))));
    stage_norms_.push_back(register_module("stage_norm" + std::to_string(i),
                                           torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out).affine(true))));
    ch = out;
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch + num_classes, 3, 3).padding(1)));
}

torch::Tensor ImageGeneratorImpl::encode(const torch::Tensor& label_map) {
  auto x = label_map;
  for (auto& block : down_) x = block->forward(x);
  return x;
}

torch::Tensor ImageGeneratorImpl::gate_vector(const torch::Tensor& s) { return gate_(s); }

torch::Tensor ImageGeneratorImpl::forward(const torch::Tensor& label_map, const torch::Tensor& s, const torch::Tensor& z,
                                          int zero_layout_stage) {
  if (label_map.dim() != 4 || label_map.size(1) != num_classes_ || label_map.size(2) != image_size_ ||
      label_map.size(3) != image_size_) {
    throw Error(ErrorCode::kShapeMismatch, "label map must be [N, L, H, W] on the image grid");
  }
  const auto n = label_map.size(0);
  if (s.dim() != 2 || s.size(0) != n || s.size(1) != text_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "text embedding must be [N, D]");
  }
  if (z.dim() != 2 || z.size(0) != n || z.size(1) != noise_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "noise must be [N, d_z]");
  }
  if (!torch::isfinite(label_map).all().item<bool>() || !torch::isfinite(s).all().item<bool>() ||
      !torch::isfinite(z).all().item<bool>()) {
    throw Error(ErrorCode::kNonFinite, "non-finite image generator input");
  }
  auto a = encode(label_map);
  const auto h = a.size(2);
  const auto w = a.size(3);
  auto gated = attention_ ? gate_layout(a, gate_(s)) : a;
  std::vector<torch::Tensor> parts{gated, nn::spatial_tile(background_(s), h, w)};
  if (noise_dim_ > 0) parts.push_back(nn::spatial_tile(z, h, w));
  auto x = combine_(torch::cat(parts, 1));
  for (auto& block : residual_) x = block->forward(x);
  for (std::size_t i = 0; i <= stages_.size(); ++i) {
    auto side = resize_map(label_map, x.size(2));
    if (static_cast<int>(i) == zero_layout_stage) side = torch::zeros_like(side);
    x = torch::cat({x, side}, 1);
    if (i == stages_.size()) return torch::tanh(out_(x));
    x = stages_[i]->forward(x);
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = torch::relu(stage_norms_[i]->forward(x));
  }
  return x;
}

ImageDiscriminatorImpl::ImageDiscriminatorImpl(std::int64_t num_classes, std::int64_t text_dim,
                                               const ImageConfig& config)
    : num_classes_(num_classes), text_dim_(text_dim) {
  std::int64_t ch = num_classes + 3;
  for (int i = 0; i < config.disc_down; ++i) {
    const std::int64_t out = static_cast<std::int64_t>(config.disc_channels) << i;
    down_.push_back(register_module("down" + std::to_string(i),
                                    nn::build_block(nn::BlockKind::kDown, {ch, out, nn::Activation::kLeakyRelu})));
    ch = out;
  }
  text_ = register_module("text", torch::nn::Linear(text_dim, config.disc_text_dim));
  fuse_ = register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch + config.disc_text_dim, ch, 1)));
  score_ = register_module("score", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 1)));
}

torch::Tensor ImageDiscriminatorImpl::forward(const torch::Tensor& label_map, const torch::Tensor& s,
                                              const torch::Tensor& image) {
  if (label_map.dim() != 4 || image.dim() != 4 || label_map.size(1) != num_classes_ || image.size(1) != 3 ||
      label_map.size(0) != image.size(0) || label_map.size(2) != image.size(2) || label_map.size(3) != image.size(3)) {
    throw Error(ErrorCode::kShapeMismatch, "discriminator expects aligned [N, L, H, W] map and [N, 3, H, W] image");
  }
  if (s.dim() != 2 || s.size(0) != image.size(0) || s.size(1) != text_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "text embedding must be [N, D]");
  }
  auto x = torch::cat({image, label_map}, 1);
  for (auto& block : down_) x = block->forward(x);
  x = torch::cat({x, nn::spatial_tile(text_(s), x.size(2), x.size(3))}, 1);
  x = F::leaky_relu(fuse_(x), F::LeakyReLUFuncOptions().negative_slope(0.2));
  return score_(x).mean({1, 2, 3});
}

namespace {
void check_score(double d) {
  if (!(d > 0.0 && d < 1.0)) throw Error(ErrorCode::kOutOfRange, "discriminator score must lie in (0, 1)");
}
}  // namespace

double image_adv_value(double d_matched, double d_mismatched, double d_fake) {
  check_score(d_matched);
  check_score(d_mismatched);
  check_score(d_fake);
  return std::log(d_matched) + std::log1p(-d_mismatched) + std::log1p(-d_fake);
}

double image_total_loss(double l_adv, double l_rec, double lambda_adv, double lambda_rec) {
  return lambda_adv * l_adv + lambda_rec * l_rec;
}

torch::Tensor image_adv_value_from_logits(const torch::Tensor& matched, const torch::Tensor& mismatched,
                                          const torch::Tensor& fake) {
  // log(1 - sigmoid(x)) = logsigmoid(-x)
  return (F::logsigmoid(matched) + F::logsigmoid(-mismatched) + F::logsigmoid(-fake)).mean();
}

torch::Tensor mismatched_embeddings(const torch::Tensor& s, std::int64_t shift) {
  const auto n = s.size(0);
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "mismatched text needs a batch of at least 2");
  if (shift < 1 || shift >= n) throw Error(ErrorCode::kOutOfRange, "mismatch shift must lie in [1, N - 1]");
  return torch::roll(s, {shift}, {0});
}

}  // namespace hiergen
