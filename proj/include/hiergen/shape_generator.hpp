#pragma once

// Shape generator: box tensors -> per-instance masks through a convolutional
// encoder, a bi-directional convolutional LSTM over the instance sequence and
// a deconvolutional decoder, trained against instance-wise and global
// discriminators.

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/neural.hpp"

namespace hiergen {

class ConvLstmCellImpl : public torch::nn::Module {
 public:
  ConvLstmCellImpl(std::int64_t in_channels, std::int64_t hidden_channels);
  // Returns (h, c); x [N, C, H, W].
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                  const torch::Tensor& c);
  std::int64_t hidden_channels() const { return hidden_; }

 private:
  std::int64_t hidden_;
  torch::nn::Conv2d gates_{nullptr};
};
TORCH_MODULE(ConvLstmCell);

// Padded batch of instance sequences on the label-map grid.
//   boxes: [N, T, L, G, G] binary box tensors
//   valid: [N, T] bool, true for real instances (a prefix of each row)
struct ShapeInput {
  torch::Tensor boxes;
  torch::Tensor valid;
};

class ShapeGeneratorImpl : public torch::nn::Module {
 public:
  ShapeGeneratorImpl(std::int64_t num_classes, std::int64_t grid_size, const ShapeConfig& config);

  // noise: [N, T, d_z]. Returns masks [N, T, G, G]; padded instances are 0.
  torch::Tensor forward(const ShapeInput& input, const torch::Tensor& noise);
  std::int64_t noise_dim() const { return noise_dim_; }
  std::int64_t num_classes() const { return num_classes_; }

 private:
  std::int64_t num_classes_;
  std::int64_t grid_size_;
  std::int64_t mask_size_;
  std::int64_t noise_dim_;
  bool bidirectional_;
  bool output_masking_;
  std::vector<nn::Block> down_;
  ConvLstmCell forward_cell_{nullptr};
  ConvLstmCell backward_cell_{nullptr};
  torch::nn::Conv2d fuse_{nullptr};
  std::vector<nn::Block> residual_;
  std::vector<nn::Block> up_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(ShapeGenerator);

// Scores [B_t || M_t] (or [B_global || M_global]); L + 1 input channels.
// Returns logits [N]; the score is sigmoid(logit).
class ShapeDiscriminatorImpl : public torch::nn::Module {
 public:
  ShapeDiscriminatorImpl(std::int64_t num_classes, const ShapeConfig& config);
  torch::Tensor forward(const torch::Tensor& boxes, const torch::Tensor& masks);
  std::int64_t input_channels() const { return num_classes_ + 1; }

 private:
  std::int64_t num_classes_;
  std::vector<nn::Block> down_;
  torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(ShapeDiscriminator);

// Region covered by each box: [N, T, G, G] from [N, T, L, G, G].
torch::Tensor box_regions(const torch::Tensor& boxes);
// B_global: pixel-wise max over valid instances, [N, L, G, G].
torch::Tensor global_box_tensor(const ShapeInput& input);
// M_global: sum of valid instance masks, [N, 1, G, G].
torch::Tensor global_mask(const torch::Tensor& masks, const torch::Tensor& valid);

// Scalar value functions on discriminator scores in (0, 1).
double instance_adv_value(double d_real, double d_fake);
double mean_adv_value(const std::vector<double>& values);
double shape_total_loss(double l_inst, double l_global, double l_rec, double lambda_inst = 1.0,
                        double lambda_global = 1.0, double lambda_rec = 10.0);

// Mean over valid instances within each scene, then over scenes; values [N, T].
torch::Tensor scene_mean(const torch::Tensor& values, const torch::Tensor& valid);

}  // namespace hiergen
