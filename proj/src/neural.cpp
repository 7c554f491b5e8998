#include "hiergen/neural.hpp"

#include "hiergen/error.hpp"

namespace hiergen::nn {

namespace F = torch::nn::functional;

BlockKind parse_block_kind(const std::string& name) {
  if (name == "down") return BlockKind::kDown;
  if (name == "up") return BlockKind::kUp;
  if (name == "residual") return BlockKind::kResidual;
  throw Error(ErrorCode::kInvalidArgument, "unknown block kind '" + name + "'");
}

namespace {
torch::nn::InstanceNorm2d make_norm(std::int64_t channels) {
  return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(true));
}
}  // namespace

BlockImpl::BlockImpl(BlockKind kind, const BlockConfig& config) : kind_(kind), config_(config) {
  if (config.in_channels < 1 || config.out_channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "block channel counts must be positive");
  }
  switch (kind) {
    case BlockKind::kDown:
      conv1_ = register_module(
          "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.in_channels, config.out_channels, 4).stride(2).padding(1)));
      break;
    case BlockKind::kUp:
      if (config.up_mode == UpMode::kDeconv) {
        deconv_ = register_module("deconv", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(
                                                config.in_channels, config.out_channels, 4).stride(2).padding(1)));
      } else {
        conv1_ = register_module(
            "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.in_channels, config.out_channels, 3).padding(1)));
      }
      break;
    case BlockKind::kResidual:
      if (config.in_channels != config.out_channels) {
        throw Error(ErrorCode::kInvalidArgument, "residual blocks need equal in/out channels");
      }
      conv1_ = register_module(
          "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.in_channels, config.out_channels, 3).padding(1)));
      conv2_ = register_module(
          "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(config.out_channels, config.out_channels, 3).padding(1)));
      norm2_ = register_module("norm2", make_norm(config.out_channels));
      break;
  }
  norm1_ = register_module("norm1", make_norm(config.out_channels));
}

torch::Tensor BlockImpl::activate(const torch::Tensor& x) const {
  return config_.activation == Activation::kLeakyRelu ? F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2))
                                                      : torch::relu(x);
}

torch::Tensor BlockImpl::forward(const torch::Tensor& x) {
  switch (kind_) {
    case BlockKind::kDown:
      return activate(norm1_(conv1_(x)));
    case BlockKind::kUp:
      if (deconv_) return activate(norm1_(deconv_(x)));
      return activate(norm1_(conv1_(F::interpolate(
          x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kBilinear).align_corners(false)))));
    case BlockKind::kResidual:
      return x + norm2_(conv2_(activate(norm1_(conv1_(x)))));
  }
  return x;
}

Block build_block(BlockKind kind, const BlockConfig& config) { return Block(kind, config); }

torch::Tensor spatial_tile(const torch::Tensor& v, std::int64_t h, std::int64_t w) {
  if (v.dim() == 1) return spatial_tile(v.unsqueeze(0), h, w).squeeze(0);
  if (v.dim() != 2 || v.size(1) < 1) throw Error(ErrorCode::kShapeMismatch, "spatial_tile expects [N, d] input");
  return v.unsqueeze(2).unsqueeze(3).expand({v.size(0), v.size(1), h, w});
}

FeatureExtractorImpl::FeatureExtractorImpl(const std::vector<int>& channels, bool include_identity)
    : include_identity_(include_identity), output_channels_(3) {
  std::int64_t in = 3;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    stages_.push_back(register_module("stage" + std::to_string(i),
                                      build_block(BlockKind::kDown, {in, channels[i], Activation::kRelu})));
    in = channels[i];
  }
  output_channels_ = in;
}

std::vector<torch::Tensor> FeatureExtractorImpl::features(const torch::Tensor& x) {
  if (x.dim() != 4 || (x.size(1) != 1 && x.size(1) != 3)) {
    throw Error(ErrorCode::kShapeMismatch, "feature extractor expects [N, 1|3, H, W] input");
  }
  auto h = x.size(1) == 1 ? x.expand({x.size(0), 3, x.size(2), x.size(3)}) : x;
  std::vector<torch::Tensor> out;
  if (include_identity_) out.push_back(h);
  for (auto& stage : stages_) {
    h = stage->forward(h);
    out.push_back(h);
  }
  return out;
}

void FeatureExtractorImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
  eval();
}

torch::Tensor perceptual_distance_per_sample(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor,
                                             const std::vector<std::size_t>& layers) {
  if (a.sizes() != b.sizes()) throw Error(ErrorCode::kShapeMismatch, "perceptual_distance inputs differ in shape");
  const auto fa = extractor->features(a);
  const auto fb = extractor->features(b);
  std::vector<std::size_t> selected = layers;
  if (selected.empty()) {
    for (std::size_t l = 0; l < fa.size(); ++l) selected.push_back(l);
  }
  auto total = torch::zeros({a.size(0)}, a.options());
  for (auto l : selected) {
    if (l >= fa.size()) throw Error(ErrorCode::kOutOfRange, "perceptual layer index out of range");
    total = total + (fa[l] - fb[l]).abs().flatten(1).mean(1);
  }
  return total;
}

torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor,
                                  const std::vector<std::size_t>& layers) {
  return perceptual_distance_per_sample(a, b, extractor, layers).mean();
}

torch::Tensor reconstruction_loss(const torch::Tensor& fake, const torch::Tensor& real, ReconstructionLoss kind,
                                  FeatureExtractor* extractor) {
  if (fake.sizes() != real.sizes()) throw Error(ErrorCode::kShapeMismatch, "reconstruction inputs differ in shape");
  if (kind == ReconstructionLoss::kL1) return (fake - real).abs().flatten(1).mean(1);
  if (!extractor || extractor->is_empty()) throw Error(ErrorCode::kNotLoaded, "perceptual loss needs a feature extractor");
  return perceptual_distance_per_sample(fake, real, *extractor);
}

CropClassifierImpl::CropClassifierImpl(const ExtractorConfig& config, std::int64_t num_classes) {
  extractor_ = register_module("extractor", FeatureExtractor(config.channels, config.include_identity));
  head_ = register_module("head", torch::nn::Linear(extractor_->output_channels(), num_classes));
}

torch::Tensor CropClassifierImpl::forward(const torch::Tensor& x) {
  auto feats = extractor_->features(x);
  return head_(feats.back().mean({2, 3}));
}

void copy_parameters(torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard guard;
  auto src = from.named_parameters(true);
  auto dst = to.named_parameters(true);
  for (auto& item : dst) {
    const auto* s = src.find(item.key());
    if (!s || s->sizes() != item.value().sizes()) {
      throw Error(ErrorCode::kShapeMismatch, "parameter '" + item.key() + "' missing or mis-shaped");
    }
    item.value().copy_(*s);
  }
  auto sb = from.named_buffers(true);
  for (auto& item : to.named_buffers(true)) {
    if (const auto* s = sb.find(item.key())) item.value().copy_(*s);
  }
}

}  // namespace hiergen::nn
