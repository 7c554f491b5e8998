#include "hiergen/box_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hiergen/error.hpp"

namespace hiergen {

BivariateMixture mixture_from_raw(const torch::Tensor& raw, double rho_limit) {
  if (raw.size(-1) % 6 != 0 || raw.size(-1) == 0) {
    throw Error(ErrorCode::kShapeMismatch, "mixture head output must have 6K entries");
  }
  const auto k = raw.size(-1) / 6;
  auto parts = raw.split(k, -1);
  BivariateMixture m;
  m.log_pi = torch::log_softmax(parts[0], -1);
  m.mu = torch::stack({parts[1], parts[2]}, -1);
  m.sigma = torch::stack({parts[3], parts[4]}, -1).exp();
  auto rho = torch::tanh(parts[5]);
  m.saturated = rho.abs() > rho_limit;
  m.rho = rho.clamp(-rho_limit, rho_limit);
  return m;
}

torch::Tensor bivariate_mixture_logpdf(const BivariateMixture& m, const torch::Tensor& point) {
  if (point.size(-1) != 2) throw Error(ErrorCode::kShapeMismatch, "mixture point must have 2 coordinates");
  auto p = point.unsqueeze(-2);  // [..., 1, 2]
  auto z = (p - m.mu) / m.sigma;
  auto zx = z.select(-1, 0);
  auto zy = z.select(-1, 1);
  auto one_minus = 1 - m.rho * m.rho;
  auto quad = (zx * zx - 2 * m.rho * zx * zy + zy * zy) / one_minus;
  auto log_norm = -std::log(2 * std::numbers::pi) - m.sigma.log().sum(-1) - 0.5 * one_minus.log();
  return torch::logsumexp(m.log_pi + log_norm - 0.5 * quad, -1);
}

BoxGeneratorImpl::BoxGeneratorImpl(std::int64_t text_dim, std::int64_t num_classes, const BoxConfig& config)
    : num_classes_(num_classes),
      hidden_dim_(config.hidden_dim),
      components_(config.mixture_components),
      rho_limit_(config.rho_limit) {
  if (num_classes < 1 || text_dim < 1 || config.hidden_dim < 1 || config.mixture_components < 1) {
    throw Error(ErrorCode::kInvalidArgument, "box generator dimensions must be positive");
  }
  if (!(config.rho_limit > 0.0 && config.rho_limit < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "rho_limit must lie in (0, 1)", "box.rho_limit");
  }
  const auto l1 = num_classes + 1;
  init_h_ = register_module("init_h", torch::nn::Linear(text_dim, hidden_dim_));
  init_c_ = register_module("init_c", torch::nn::Linear(text_dim, hidden_dim_));
  cell_ = register_module("cell", torch::nn::LSTMCell(input_dim(), hidden_dim_));
  head_class_ = register_module("head_class", torch::nn::Linear(hidden_dim_, l1));
  head_xy_ = register_module("head_xy", torch::nn::Linear(hidden_dim_ + l1, 6 * components_));
  head_wh_ = register_module("head_wh", torch::nn::Linear(hidden_dim_ + l1 + 2, 6 * components_));
}

namespace {
void check_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw Error(ErrorCode::kNonFinite, std::string("non-finite values in ") + what);
  }
}
}  // namespace

DecoderState BoxGeneratorImpl::initial_state(const torch::Tensor& s) {
  check_finite(s, "text embedding");
  return {torch::tanh(init_h_(s)), init_c_(s)};
}

DecoderState BoxGeneratorImpl::step(const torch::Tensor& prev, const DecoderState& state) {
  if (prev.dim() != 2 || prev.size(1) != input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "decoder input must be [N, 4 + L + 1]");
  }
  if (state.h.size(-1) != hidden_dim_ || state.c.size(-1) != hidden_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "decoder state has the wrong dimension");
  }
  check_finite(prev, "decoder input");
  auto [h, c] = cell_(prev, std::make_tuple(state.h, state.c));
  return {h, c};
}

torch::Tensor BoxGeneratorImpl::class_logits(const torch::Tensor& h) { return head_class_(h); }

BivariateMixture BoxGeneratorImpl::xy_mixture(const torch::Tensor& h, const torch::Tensor& label_onehot) {
  return mixture_from_raw(head_xy_(torch::cat({h, label_onehot}, -1)), rho_limit_);
}

BivariateMixture BoxGeneratorImpl::wh_mixture(const torch::Tensor& h, const torch::Tensor& label_onehot,
                                              const torch::Tensor& xy) {
  return mixture_from_raw(head_wh_(torch::cat({h, label_onehot, xy}, -1)), rho_limit_);
}

torch::Tensor BoxGeneratorImpl::encode_box(const BoxSpec& box, torch::TensorOptions options) const {
  if (box.label < 0 || box.label >= num_classes_) {
    throw Error(ErrorCode::kInvalidLabel, "box label " + std::to_string(box.label) + " out of range");
  }
  auto row = torch::zeros({input_dim()}, options);
  row.index_put_({0}, box.x);
  row.index_put_({1}, box.y);
  row.index_put_({2}, box.w);
  row.index_put_({3}, box.h);
  row.index_put_({4 + box.label}, 1.0);
  return row;
}

torch::Tensor BoxGeneratorImpl::start_token(std::int64_t batch, torch::TensorOptions options) const {
  return torch::zeros({batch, input_dim()}, options);
}

torch::Tensor BoxGeneratorImpl::label_onehot(const torch::Tensor& labels) const {
  return torch::one_hot(labels.to(torch::kLong), num_classes_ + 1);
}

NllResult sequence_nll(BoxGenerator& model, const torch::Tensor& s, const std::vector<LayoutSequence>& layouts,
                       const NllOptions& options) {
  const auto n = static_cast<std::int64_t>(layouts.size());
  if (n == 0 || s.dim() != 2 || s.size(0) != n) {
    throw Error(ErrorCode::kShapeMismatch, "text embeddings and layouts must align");
  }
  std::int64_t t_max = 0;
  for (const auto& layout : layouts) {
    if (layout.boxes.empty()) throw Error(ErrorCode::kInvalidArgument, "sequence NLL needs at least one box (T = 0)");
    t_max = std::max<std::int64_t>(t_max, static_cast<std::int64_t>(layout.boxes.size()));
  }
  const auto opts = s.options();
  // Padded targets: step t < T_i holds box t, step T_i the terminator.
  const auto steps = t_max + 1;
  auto coords_d = torch::zeros({steps, n, 4}, torch::kDouble);
  auto labels = torch::full({steps, n}, model->terminal_class(), torch::kLong);
  auto class_live_d = torch::zeros({steps, n}, torch::kDouble);
  auto lengths_d = torch::zeros({n}, torch::kDouble);
  {
    auto ca = coords_d.accessor<double, 3>();
    auto la = labels.accessor<std::int64_t, 2>();
    auto cl = class_live_d.accessor<double, 2>();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& boxes = layouts[static_cast<std::size_t>(i)].boxes;
      const auto t_i = static_cast<std::int64_t>(boxes.size());
      for (std::int64_t t = 0; t < t_i; ++t) {
        const auto& b = boxes[static_cast<std::size_t>(t)];
        if (b.label < 0 || b.label >= model->num_classes()) {
          throw Error(ErrorCode::kInvalidLabel, "ground-truth label out of range");
        }
        ca[t][i][0] = b.x;
        ca[t][i][1] = b.y;
        ca[t][i][2] = b.w;
        ca[t][i][3] = b.h;
        la[t][i] = b.label;
      }
      for (std::int64_t t = 0; t <= t_i; ++t) cl[t][i] = 1.0;
      lengths_d[i] = static_cast<double>(t_i);
    }
  }
  const auto coords = coords_d.to(opts.dtype());
  const auto class_live = class_live_d.to(opts.dtype());
  const auto lengths = lengths_d.to(opts.dtype());
  const auto onehots = model->label_onehot(labels).to(opts.dtype());  // [steps, n, L+1]

  NllResult result;
  auto state = model->initial_state(s);
  auto prev = model->start_token(n, opts);
  auto class_sum = torch::zeros({n}, opts);
  auto coord_sum = torch::zeros({n}, opts);
  for (std::int64_t t = 0; t < steps; ++t) {
    state = model->step(prev, state);
    auto logp = torch::log_softmax(model->class_logits(state.h), -1);
    class_sum = class_sum - logp.gather(1, labels[t].unsqueeze(1)).squeeze(1) * class_live[t];
    // Coordinates are scored on object steps only.
    auto coord_live = (lengths > static_cast<double>(t)).to(opts.dtype());
    if (t < t_max) {
      auto xy = coords[t].slice(1, 0, 2);
      auto wh = coords[t].slice(1, 2, 4);
      auto mxy = model->xy_mixture(state.h, onehots[t]);
      auto mwh = model->wh_mixture(state.h, onehots[t], xy);
      auto ll = bivariate_mixture_logpdf(mxy, xy) + bivariate_mixture_logpdf(mwh, wh);
      coord_sum = coord_sum - ll * coord_live;
      auto live = (coord_live > 0).unsqueeze(1);
      result.rho_total += 2 * live.sum().item<std::int64_t>() * model->components();
      result.rho_clamped += ((mxy.saturated & live).sum() + (mwh.saturated & live).sum()).item<std::int64_t>();
    }
    prev = torch::cat({coords[t], onehots[t]}, 1);
  }
  const auto class_den =
      options.class_averaging == ClassAveraging::kObjectsAndTerminator ? lengths + 1 : lengths;
  result.class_sum = class_sum;
  result.coord_sum = coord_sum;
  result.class_term = (class_sum / class_den).mean();
  result.coord_term = (coord_sum / lengths).mean();
  result.loss = options.lambda_class * result.class_term + options.lambda_box * result.coord_term;
  return result;
}

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  if (probs.empty()) throw Error(ErrorCode::kInvalidArgument, "empty categorical");
  double total = 0.0;
  for (double p : probs) total += p;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  // Rounding can leave u just past the last edge; return the last nonzero entry.
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::pair<double, double> sample_bivariate_mixture(const std::vector<double>& pi, const std::vector<double>& mu,
                                                   const std::vector<double>& sigma, const std::vector<double>& rho,
                                                   Rng& rng) {
  const auto k = static_cast<std::size_t>(sample_categorical(pi, rng));
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const double r = rho[k];
  const double u = mu[2 * k] + sigma[2 * k] * z1;
  const double v = mu[2 * k + 1] + sigma[2 * k + 1] * (r * z1 + std::sqrt(1 - r * r) * z2);
  return {u, v};
}

namespace {

struct MixtureValues {
  std::vector<double> pi, mu, sigma, rho;
};

MixtureValues to_values(const BivariateMixture& m) {
  auto get = [](const torch::Tensor& t) {
    auto d = t.detach().to(torch::kDouble).contiguous().reshape({-1});
    return std::vector<double>(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  };
  MixtureValues v{get(m.log_pi.exp()), get(m.mu), get(m.sigma), get(m.rho)};
  return v;
}

}  // namespace

SampledLayout sample_layout(BoxGenerator& model, const torch::Tensor& s, Rng& rng, int max_steps,
                            double min_extent) {
  if (max_steps < 0) throw Error(ErrorCode::kInvalidArgument, "max_steps must be non-negative");
  if (!(min_extent > 0.0 && min_extent <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "min_extent must lie in (0, 1]");
  }
  torch::NoGradGuard no_grad;
  auto emb = s.dim() == 1 ? s.unsqueeze(0) : s;
  if (emb.dim() != 2 || emb.size(0) != 1) throw Error(ErrorCode::kShapeMismatch, "sample_layout takes one embedding");
  const auto opts = emb.options();
  SampledLayout out;
  auto state = model->initial_state(emb);
  auto prev = model->start_token(1, opts);
  for (int t = 0;; ++t) {
    if (t == max_steps) {
      out.truncated = true;
      break;
    }
    state = model->step(prev, state);
    auto probs_t = torch::softmax(model->class_logits(state.h), -1).to(torch::kDouble).reshape({-1}).contiguous();
    std::vector<double> probs(probs_t.data_ptr<double>(), probs_t.data_ptr<double>() + probs_t.numel());
    const int label = sample_categorical(probs, rng);
    if (label == model->terminal_class()) break;
    auto onehot = model->label_onehot(torch::tensor({static_cast<std::int64_t>(label)})).to(opts.dtype());
    const auto xy_m = to_values(model->xy_mixture(state.h, onehot));
    auto [x, y] = sample_bivariate_mixture(xy_m.pi, xy_m.mu, xy_m.sigma, xy_m.rho, rng);
    x = std::clamp(x, 0.0, 1.0 - min_extent);
    y = std::clamp(y, 0.0, 1.0 - min_extent);
    auto xy = torch::tensor({x, y}, opts).reshape({1, 2});
    const auto wh_m = to_values(model->wh_mixture(state.h, onehot, xy));
    auto [w, h] = sample_bivariate_mixture(wh_m.pi, wh_m.mu, wh_m.sigma, wh_m.rho, rng);
    w = std::clamp(w, min_extent, 1.0 - x);
    h = std::clamp(h, min_extent, 1.0 - y);
    BoxSpec box{x, y, w, h, label};
    out.layout.boxes.push_back(box);
    prev = model->encode_box(box, opts).unsqueeze(0);
  }
  return out;
}

}  // namespace hiergen
