#include "hiergen/shape_generator.hpp"

#include <cmath>

#include "hiergen/error.hpp"

namespace hiergen {

namespace F = torch::nn::functional;

ConvLstmCellImpl::ConvLstmCellImpl(std::int64_t in_channels, std::int64_t hidden_channels) : hidden_(hidden_channels) {
  gates_ = register_module(
      "gates", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels + hidden_channels, 4 * hidden_channels, 3).padding(1)));
}

std::pair<torch::Tensor, torch::Tensor> ConvLstmCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                                  const torch::Tensor& c) {
  auto g = gates_(torch::cat({x, h}, 1)).chunk(4, 1);
  auto i = torch::sigmoid(g[0]);
  auto f = torch::sigmoid(g[1]);
  auto o = torch::sigmoid(g[2]);
  auto u = torch::tanh(g[3]);
  auto c_next = f * c + i * u;
  return {o * torch::tanh(c_next), c_next};
}

ShapeGeneratorImpl::ShapeGeneratorImpl(std::int64_t num_classes, std::int64_t grid_size, const ShapeConfig& config)
    : num_classes_(num_classes),
      grid_size_(grid_size),
      mask_size_(config.mask_size),
      noise_dim_(config.noise_dim),
      bidirectional_(config.bidirectional),
      output_masking_(config.output_masking) {
  if (num_classes < 1 || config.num_down < 0 || config.noise_dim < 0 || config.base_channels < 1 ||
      config.lstm_channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "invalid shape generator configuration");
  }
  if (config.mask_size % (1 << config.num_down) != 0 || config.mask_size > grid_size) {
    throw Error(ErrorCode::kInvalidArgument, "mask_size must be divisible by 2^num_down and fit the grid",
                "shape.mask_size");
  }
  std::int64_t ch = num_classes;
  for (int i = 0; i < config.num_down; ++i) {
    const std::int64_t out = static_cast<std::int64_t>(config.base_channels) << i;
    down_.push_back(register_module("down" + std::to_string(i), nn::build_block(nn::BlockKind::kDown, {ch, out})));
    ch = out;
  }
  forward_cell_ = register_module("lstm_fwd", ConvLstmCell(ch, config.lstm_channels));
  std::int64_t core = config.lstm_channels;
  if (bidirectional_) {
    backward_cell_ = register_module("lstm_bwd", ConvLstmCell(ch, config.lstm_channels));
    core *= 2;
  }
  fuse_ = register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(core + noise_dim_, ch, 1)));
  for (int i = 0; i < config.num_residual; ++i) {
    residual_.push_back(
        register_module("res" + std::to_string(i), nn::build_block(nn::BlockKind::kResidual, {ch, ch})));
  }
  for (int i = config.num_down - 1; i >= 0; --i) {
    const std::int64_t out = static_cast<std::int64_t>(config.base_channels) << std::max(0, i - 1);
    nn::BlockConfig bc{ch, out, nn::Activation::kRelu, nn::UpMode::kDeconv};
    up_.push_back(register_module("up" + std::to_string(config.num_down - 1 - i), nn::build_block(nn::BlockKind::kUp, bc)));
    ch = out;
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 1)));
}

torch::Tensor box_regions(const torch::Tensor& boxes) {
  if (boxes.dim() != 5) throw Error(ErrorCode::kShapeMismatch, "box tensors must be [N, T, L, G, G]");
  return std::get<0>(boxes.max(2));
}

torch::Tensor global_box_tensor(const ShapeInput& input) {
  auto v = input.valid.to(input.boxes.dtype()).unsqueeze(2).unsqueeze(3).unsqueeze(4);
  return std::get<0>((input.boxes * v).max(1));
}

torch::Tensor global_mask(const torch::Tensor& masks, const torch::Tensor& valid) {
  return (masks * valid.to(masks.dtype()).unsqueeze(2).unsqueeze(3)).sum(1, true);
}

torch::Tensor ShapeGeneratorImpl::forward(const ShapeInput& input, const torch::Tensor& noise) {
  const auto& boxes = input.boxes;
  if (boxes.dim() != 5 || boxes.size(2) != num_classes_ || boxes.size(3) != grid_size_ ||
      boxes.size(4) != grid_size_) {
    throw Error(ErrorCode::kShapeMismatch, "box tensors must be [N, T, L, G, G] on the configured grid");
  }
  const auto n = boxes.size(0);
  const auto t_max = boxes.size(1);
  if (t_max == 0) throw Error(ErrorCode::kInvalidArgument, "shape generator needs at least one instance (T = 0)");
  if (input.valid.sizes() != torch::IntArrayRef({n, t_max})) {
    throw Error(ErrorCode::kShapeMismatch, "valid flags must be [N, T]");
  }
  if (noise.dim() != 3 || noise.size(0) != n || noise.size(1) != t_max || noise.size(2) != noise_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "noise must be [N, T, d_z]");
  }
  if (!torch::isfinite(boxes).all().item<bool>() || !torch::isfinite(noise).all().item<bool>()) {
    throw Error(ErrorCode::kNonFinite, "non-finite shape generator input");
  }
  const auto dtype = boxes.dtype();
  auto flat = boxes.reshape({n * t_max, num_classes_, grid_size_, grid_size_});
  auto x = F::adaptive_max_pool2d(flat, F::AdaptiveMaxPool2dFuncOptions(mask_size_));
  for (auto& block : down_) x = block->forward(x);
  const auto core = x.size(2);
  auto feats = x.reshape({n, t_max, x.size(1), core, core});
  auto valid = input.valid.to(dtype);

  auto run = [&](ConvLstmCell& cell, bool reverse) {
    std::vector<torch::Tensor> out(static_cast<std::size_t>(t_max));
    auto h = torch::zeros({n, cell->hidden_channels(), core, core}, feats.options());
    auto c = torch::zeros_like(h);
    for (std::int64_t k = 0; k < t_max; ++k) {
      const auto t = reverse ? t_max - 1 - k : k;
      auto [h_new, c_new] = cell->forward(feats.select(1, t), h, c);
      // Padded steps leave the state untouched.
      auto v = valid.select(1, t).reshape({n, 1, 1, 1});
      h = v * h_new + (1 - v) * h;
      c = v * c_new + (1 - v) * c;
      out[static_cast<std::size_t>(t)] = h;
    }
    return torch::stack(out, 1);
  };
  auto core_out = run(forward_cell_, false);
  if (bidirectional_) core_out = torch::cat({core_out, run(backward_cell_, true)}, 2);
  auto h = core_out.reshape({n * t_max, core_out.size(2), core, core});
  if (noise_dim_ > 0) h = torch::cat({h, nn::spatial_tile(noise.reshape({n * t_max, noise_dim_}), core, core)}, 1);
  h = fuse_(h);

  auto regions = box_regions(boxes).reshape({n * t_max, 1, grid_size_, grid_size_});
  auto core_region = F::adaptive_max_pool2d(regions, F::AdaptiveMaxPool2dFuncOptions(core));
  h = h * core_region;
  for (auto& block : residual_) h = block->forward(h) * core_region;
  for (auto& block : up_) h = block->forward(h);
  auto masks = torch::sigmoid(out_(h));
  masks = F::interpolate(masks, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{grid_size_, grid_size_})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
  if (output_masking_) masks = masks * regions;
  return masks.reshape({n, t_max, grid_size_, grid_size_}) * valid.unsqueeze(2).unsqueeze(3);
}

ShapeDiscriminatorImpl::ShapeDiscriminatorImpl(std::int64_t num_classes, const ShapeConfig& config)
    : num_classes_(num_classes) {
  std::int64_t ch = num_classes + 1;
  for (int i = 0; i < config.disc_down; ++i) {
    const std::int64_t out = static_cast<std::int64_t>(config.disc_channels) << i;
    down_.push_back(register_module("down" + std::to_string(i),
                                    nn::build_block(nn::BlockKind::kDown, {ch, out, nn::Activation::kLeakyRelu})));
    ch = out;
  }
  score_ = register_module("score", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 1, 1)));
}

torch::Tensor ShapeDiscriminatorImpl::forward(const torch::Tensor& boxes, const torch::Tensor& masks) {
  if (boxes.dim() != 4 || boxes.size(1) != num_classes_) {
    throw Error(ErrorCode::kShapeMismatch, "discriminator boxes must be [N, L, G, G]");
  }
  auto m = masks.dim() == 3 ? masks.unsqueeze(1) : masks;
  if (m.dim() != 4 || m.size(1) != 1 || m.size(0) != boxes.size(0) || m.size(2) != boxes.size(2) ||
      m.size(3) != boxes.size(3)) {
    throw Error(ErrorCode::kShapeMismatch, "discriminator masks must be [N, 1, G, G] aligned with boxes");
  }
  auto x = torch::cat({boxes, m}, 1);
  for (auto& block : down_) x = block->forward(x);
  return score_(x).mean({1, 2, 3});
}

namespace {
void check_score(double d) {
  if (!(d > 0.0 && d < 1.0)) throw Error(ErrorCode::kOutOfRange, "discriminator score must lie in (0, 1)");
}
}  // namespace

double instance_adv_value(double d_real, double d_fake) {
  check_score(d_real);
  check_score(d_fake);
  return std::log(d_real) + std::log1p(-d_fake);
}

double mean_adv_value(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "no instances to aggregate (T = 0)");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double shape_total_loss(double l_inst, double l_global, double l_rec, double lambda_inst, double lambda_global,
                        double lambda_rec) {
  return lambda_inst * l_inst + lambda_global * l_global + lambda_rec * l_rec;
}

torch::Tensor scene_mean(const torch::Tensor& values, const torch::Tensor& valid) {
  auto v = valid.to(values.dtype());
  auto counts = v.sum(1);
  if ((counts <= 0).any().item<bool>()) throw Error(ErrorCode::kInvalidArgument, "scene without instances (T = 0)");
  return ((values * v).sum(1) / counts).mean();
}

}  // namespace hiergen
