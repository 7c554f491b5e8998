#pragma once

// Building blocks shared by the generators and discriminators, plus the
// frozen feature extractor behind the perceptual distance.

#include <string>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"

namespace hiergen::nn {

enum class BlockKind { kDown, kUp, kResidual };
enum class Activation { kRelu, kLeakyRelu };
enum class UpMode { kBilinear, kDeconv };

BlockKind parse_block_kind(const std::string& name);

struct BlockConfig {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Activation activation = Activation::kRelu;
  UpMode up_mode = UpMode::kBilinear;
};

// down:     4x4 stride-2 conv -> instance norm -> ReLU / LeakyReLU(0.2)
// up:       bilinear x2 -> 3x3 conv (or 4x4 stride-2 deconv) -> instance norm -> ReLU
// residual: (3x3 conv -> norm -> ReLU -> 3x3 conv -> norm) + input
class BlockImpl : public torch::nn::Module {
 public:
  BlockImpl(BlockKind kind, const BlockConfig& config);
  torch::Tensor forward(const torch::Tensor& x);
  BlockKind kind() const { return kind_; }

 private:
  torch::Tensor activate(const torch::Tensor& x) const;

  BlockKind kind_;
  BlockConfig config_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::ConvTranspose2d deconv_{nullptr};
  torch::nn::InstanceNorm2d norm1_{nullptr};
  torch::nn::InstanceNorm2d norm2_{nullptr};
};
TORCH_MODULE(Block);

Block build_block(BlockKind kind, const BlockConfig& config);

// [N, d] (or [d]) -> [N, d, h, w] with every location equal to the vector.
torch::Tensor spatial_tile(const torch::Tensor& v, std::int64_t h, std::int64_t w);

// Stack of down blocks whose outputs are the perceptual feature layers. With
// include_identity the raw input is the first layer.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  FeatureExtractorImpl(const std::vector<int>& channels, bool include_identity);

  // Accepts 1- or 3-channel input; single channels are replicated.
  std::vector<torch::Tensor> features(const torch::Tensor& x);
  std::size_t num_layers() const { return stages_.size() + (include_identity_ ? 1 : 0); }
  std::int64_t output_channels() const { return output_channels_; }
  void freeze();

 private:
  std::vector<Block> stages_;
  bool include_identity_;
  std::int64_t output_channels_;
};
TORCH_MODULE(FeatureExtractor);

// Sum over the selected layers of the elementwise-mean absolute feature
// difference. An empty layer list means every layer.
torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor,
                                  const std::vector<std::size_t>& layers = {});

// Per-sample variant: [N] distances whose mean is perceptual_distance.
torch::Tensor perceptual_distance_per_sample(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& extractor,
                                             const std::vector<std::size_t>& layers = {});

// [N] per-sample reconstruction distances (elementwise-mean l1 or perceptual).
torch::Tensor reconstruction_loss(const torch::Tensor& fake, const torch::Tensor& real, ReconstructionLoss kind,
                                  FeatureExtractor* extractor);

// Extractor + global average pool + linear head; also the evaluation oracle.
class CropClassifierImpl : public torch::nn::Module {
 public:
  CropClassifierImpl(const ExtractorConfig& config, std::int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& x);
  FeatureExtractor extractor() const { return extractor_; }

 private:
  FeatureExtractor extractor_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(CropClassifier);

// Value semantics copy of all parameters and buffers between identically
// shaped modules.
void copy_parameters(torch::nn::Module& from, torch::nn::Module& to);

}  // namespace hiergen::nn
