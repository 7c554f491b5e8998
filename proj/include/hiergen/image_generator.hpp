#pragma once

// Image generator: label-map encoder, sigmoid text gating of the layout
// feature, residual core and a cascaded decoder that re-reads the label map at
// every upsampling stage; plus the layout- and text-conditioned discriminator.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/neural.hpp"

namespace hiergen {

// A^g = A * sigmoid(S) with S the spatial tiling of `gate` ([N, d]) over A
// ([N, d, h, w]).
torch::Tensor gate_layout(const torch::Tensor& layout_feature, const torch::Tensor& gate);

class ImageGeneratorImpl : public torch::nn::Module {
 public:
  ImageGeneratorImpl(std::int64_t num_classes, std::int64_t text_dim, std::int64_t image_size,
                     const ImageConfig& config);

  // label_map [N, L, H, W] in {0, 1}, s [N, D], z [N, d_z] -> [N, 3, H, W] in [-1, 1].
  // zero_layout_stage >= 0 drops the label-map side input of that decoder
  // stage (used to probe stage sensitivity).
  torch::Tensor forward(const torch::Tensor& label_map, const torch::Tensor& s, const torch::Tensor& z,
                        int zero_layout_stage = -1);
  // Encoder output A, [N, d, h, w].
  torch::Tensor encode(const torch::Tensor& label_map);
  torch::Tensor gate_vector(const torch::Tensor& s);

  std::int64_t noise_dim() const { return noise_dim_; }
  int decoder_stages() const { return static_cast<int>(stages_.size()) + 1; }

 private:
  std::int64_t num_classes_;
  std::int64_t text_dim_;
  std::int64_t image_size_;
  std::int64_t noise_dim_;
  bool attention_;
  std::vector<nn::Block> down_;
  torch::nn::Linear gate_{nullptr};
  torch::nn::Linear background_{nullptr};
  torch::nn::Conv2d combine_{nullptr};
  std::vector<nn::Block> residual_;
  std::vector<torch::nn::Conv2d> stages_;
  std::vector<torch::nn::InstanceNorm2d> stage_norms_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(ImageGenerator);

// Logit whose sigmoid is D(M, s, X).
class ImageDiscriminatorImpl : public torch::nn::Module {
 public:
  ImageDiscriminatorImpl(std::int64_t num_classes, std::int64_t text_dim, const ImageConfig& config);
  torch::Tensor forward(const torch::Tensor& label_map, const torch::Tensor& s, const torch::Tensor& image);

 private:
  std::int64_t num_classes_;
  std::int64_t text_dim_;
  std::vector<nn::Block> down_;
  torch::nn::Linear text_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
  torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(ImageDiscriminator);

// log D(matched) + log(1 - D(mismatched)) + log(1 - D(fake)); scores in (0, 1).
double image_adv_value(double d_matched, double d_mismatched, double d_fake);
double image_total_loss(double l_adv, double l_rec, double lambda_adv = 1.0, double lambda_rec = 10.0);

// Batched value from discriminator logits, [N] each; mean over the batch.
torch::Tensor image_adv_value_from_logits(const torch::Tensor& matched, const torch::Tensor& mismatched,
                                          const torch::Tensor& fake);

// s rolled by `shift` in [1, N - 1] rows: every row gets another example's text.
torch::Tensor mismatched_embeddings(const torch::Tensor& s, std::int64_t shift);

}  // namespace hiergen
