#pragma once

// Autoregressive box generator: an LSTM decoder conditioned on the text
// embedding, a class head over L + 1 outcomes (the last one terminates) and
// two bivariate Gaussian mixture heads, p(x, y | l) then p(w, h | x, y, l).

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "hiergen/config.hpp"
#include "hiergen/layout.hpp"
#include "hiergen/rng.hpp"

namespace hiergen {

// Batched mixture over K components; leading dimensions are arbitrary.
struct BivariateMixture {
  torch::Tensor log_pi;  // [..., K]
  torch::Tensor mu;      // [..., K, 2]
  torch::Tensor sigma;   // [..., K, 2]
  torch::Tensor rho;     // [..., K]
  torch::Tensor saturated;  // [..., K] bool, correlation hit the clamp

  std::int64_t components() const { return log_pi.size(-1); }
};

// Raw head output [..., 6K] laid out as (pi logits, mu_x, mu_y, log sigma_x,
// log sigma_y, rho logit) blocks of K. pi = softmax, sigma = exp, rho = tanh
// clamped to +-rho_limit.
BivariateMixture mixture_from_raw(const torch::Tensor& raw, double rho_limit = 0.99999);
// log sum_k pi_k N(point; mu_k, Sigma_k), point [..., 2].
torch::Tensor bivariate_mixture_logpdf(const BivariateMixture& mixture, const torch::Tensor& point);

struct DecoderState {
  torch::Tensor h;  // [N, hidden]
  torch::Tensor c;  // [N, hidden]
};

class BoxGeneratorImpl : public torch::nn::Module {
 public:
  BoxGeneratorImpl(std::int64_t text_dim, std::int64_t num_classes, const BoxConfig& config);

  std::int64_t num_classes() const { return num_classes_; }
  std::int64_t terminal_class() const { return num_classes_; }
  std::int64_t input_dim() const { return 4 + num_classes_ + 1; }
  std::int64_t hidden_dim() const { return hidden_dim_; }
  std::int64_t components() const { return components_; }
  double rho_limit() const { return rho_limit_; }

  // h0 = tanh(W s + b), c0 = W' s + b'.
  DecoderState initial_state(const torch::Tensor& s);
  // prev: [N, 4 + L + 1] = [x, y, w, h, one-hot label]; START is all zeros.
  DecoderState step(const torch::Tensor& prev, const DecoderState& state);
  torch::Tensor class_logits(const torch::Tensor& h);
  BivariateMixture xy_mixture(const torch::Tensor& h, const torch::Tensor& label_onehot);
  BivariateMixture wh_mixture(const torch::Tensor& h, const torch::Tensor& label_onehot, const torch::Tensor& xy);

  // Row encoding of a box for the decoder input.
  torch::Tensor encode_box(const BoxSpec& box, torch::TensorOptions options) const;
  torch::Tensor start_token(std::int64_t batch, torch::TensorOptions options) const;
  torch::Tensor label_onehot(const torch::Tensor& labels) const;

 private:
  std::int64_t num_classes_;
  std::int64_t hidden_dim_;
  std::int64_t components_;
  double rho_limit_;
  torch::nn::Linear init_h_{nullptr};
  torch::nn::Linear init_c_{nullptr};
  torch::nn::LSTMCell cell_{nullptr};
  torch::nn::Linear head_class_{nullptr};
  torch::nn::Linear head_xy_{nullptr};
  torch::nn::Linear head_wh_{nullptr};
};
TORCH_MODULE(BoxGenerator);

struct NllOptions {
  double lambda_class = 4.0;
  double lambda_box = 1.0;
  ClassAveraging class_averaging = ClassAveraging::kObjectsAndTerminator;
};

struct NllResult {
  torch::Tensor loss;        // batch mean of per-scene losses
  torch::Tensor class_term;  // batch mean of the averaged class NLL (unweighted)
  torch::Tensor coord_term;  // batch mean of the averaged coordinate NLL (unweighted)
  torch::Tensor class_sum;   // [N] summed class NLL over the T + 1 steps
  torch::Tensor coord_sum;   // [N] summed coordinate NLL over the T steps
  std::int64_t rho_clamped = 0;
  std::int64_t rho_total = 0;
};

// Teacher-forced NLL of the ground-truth layouts; s: [N, D] aligned with
// layouts. Every layout needs at least one box.
NllResult sequence_nll(BoxGenerator& model, const torch::Tensor& s, const std::vector<LayoutSequence>& layouts,
                       const NllOptions& options = {});

struct SampledLayout {
  LayoutSequence layout;
  bool truncated = false;
};

// Ancestral sampling for one embedding s: [D] or [1, D]. Widths and heights
// are floored at min_extent.
SampledLayout sample_layout(BoxGenerator& model, const torch::Tensor& s, Rng& rng, int max_steps,
                            double min_extent);

// Scalar draws used by sample_layout, exposed for testing.
int sample_categorical(const std::vector<double>& probs, Rng& rng);
std::pair<double, double> sample_bivariate_mixture(const std::vector<double>& pi, const std::vector<double>& mu,
                                                   const std::vector<double>& sigma, const std::vector<double>& rho,
                                                   Rng& rng);

}  // namespace hiergen
