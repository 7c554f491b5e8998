#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "hiergen/box_generator.hpp"
#include "hiergen/rng.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace hiergen;
using testing::error_code;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kDouble);

BoxGenerator tiny_model(std::int64_t text_dim = 3, std::int64_t classes = 2, int hidden = 4, int k = 2,
                        std::uint64_t seed = 1) {
  torch::manual_seed(seed);
  BoxConfig cfg;
  cfg.hidden_dim = hidden;
  cfg.mixture_components = k;
  BoxGenerator m(text_dim, classes, cfg);
  m->to(torch::kDouble);
  return m;
}

torch::Tensor param(BoxGenerator& m, const std::string& name) { return m->named_parameters()[name]; }

void zero_all(BoxGenerator& m) {
  torch::NoGradGuard g;
  for (auto& p : m->parameters()) p.zero_();
}

// Raw mixture head output for one component per coordinate pair.
torch::Tensor raw_mixture(const std::vector<double>& pi_logits, const std::vector<double>& mux,
                          const std::vector<double>& muy, const std::vector<double>& log_sx,
                          const std::vector<double>& log_sy, const std::vector<double>& rho_logit) {
  std::vector<double> all;
  for (const auto* v : {&pi_logits, &mux, &muy, &log_sx, &log_sy, &rho_logit}) all.insert(all.end(), v->begin(), v->end());
  return torch::tensor(all, kF64);
}

// Closed-form bivariate normal mixture density at (x, y).
double density_oracle(const std::vector<double>& pi, const std::vector<double>& mux, const std::vector<double>& muy,
                      const std::vector<double>& sx, const std::vector<double>& sy, const std::vector<double>& rho,
                      double x, double y) {
  double total = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    const double dx = (x - mux[k]) / sx[k];
    const double dy = (y - muy[k]) / sy[k];
    const double r = rho[k];
    const double q = (dx * dx - 2 * r * dx * dy + dy * dy) / (1 - r * r);
    total += pi[k] * std::exp(-q / 2) / (2 * std::numbers::pi * sx[k] * sy[k] * std::sqrt(1 - r * r));
  }
  return total;
}

std::vector<double> values(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kDouble).contiguous().reshape({-1});
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

LayoutSequence make_layout(std::vector<BoxSpec> boxes, int classes = 2) {
  LayoutSequence l;
  for (int k = 0; k < classes; ++k) l.class_names.push_back("c" + std::to_string(k));
  l.boxes = std::move(boxes);
  return l;
}

}  // namespace

TEST_SUITE("box-generator") {
  TEST_CASE("link functions") {
    auto m = mixture_from_raw(torch::zeros({6}, kF64));
    CHECK(m.sigma[0][0].item<double>() == 1.0);
    CHECK(m.sigma[0][1].item<double>() == 1.0);
    CHECK(m.rho[0].item<double>() == 0.0);
    CHECK(m.log_pi[0].item<double>() == 0.0);
    auto five = mixture_from_raw(torch::cat({torch::ones({5}, kF64), torch::zeros({25}, kF64)}));
    for (double p : values(five.log_pi.exp())) CHECK(p == doctest::Approx(0.2));
    auto sat = mixture_from_raw(raw_mixture({0}, {0}, {0}, {0}, {0}, {50.0}), 0.99);
    CHECK(sat.saturated[0].item<bool>());
    CHECK(sat.rho[0].item<double>() == doctest::Approx(0.99));
    CHECK(error_code([] { mixture_from_raw(torch::zeros({7}, kF64)); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("zero class logits give a uniform distribution") {
    auto m = tiny_model(3, 3);
    zero_all(m);
    auto p = torch::softmax(m->class_logits(torch::randn({1, 4}, kF64)), -1);
    REQUIRE(p.size(1) == 4);
    for (double v : values(p)) CHECK(v == doctest::Approx(0.25));
  }

  TEST_CASE("analytic peak of the standard bivariate normal") {
    auto m = mixture_from_raw(raw_mixture({0}, {0.5}, {0.5}, {0}, {0}, {0}));
    const double v = bivariate_mixture_logpdf(m, torch::tensor({0.5, 0.5}, kF64)).item<double>();
    CHECK(std::abs(v - std::log(1.0 / (2 * std::numbers::pi))) < 1e-9);
    CHECK(v == doctest::Approx(-1.837877).epsilon(1e-6));
  }

  TEST_CASE("two identical components equal one") {
    auto one = mixture_from_raw(raw_mixture({0}, {0.2}, {0.7}, {-1}, {-0.5}, {0.3}));
    auto two = mixture_from_raw(raw_mixture({0, 0}, {0.2, 0.2}, {0.7, 0.7}, {-1, -1}, {-0.5, -0.5}, {0.3, 0.3}));
    const auto pt = torch::tensor({0.4, 0.1}, kF64);
    CHECK(bivariate_mixture_logpdf(one, pt).item<double>() ==
          doctest::Approx(bivariate_mixture_logpdf(two, pt).item<double>()).epsilon(1e-14));
  }

  TEST_CASE("mixture log-density matches the closed-form density") {
    std::mt19937_64 gen(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> raw(12);
      for (auto& v : raw) v = n(gen);
      auto m = mixture_from_raw(torch::tensor(raw, kF64));
      const double x = n(gen), y = n(gen);
      const auto pi = values(m.log_pi.exp());
      const auto sig = values(m.sigma);
      const auto mu = values(m.mu);
      const auto rho = values(m.rho);
      const double oracle = density_oracle(pi, {mu[0], mu[2]}, {mu[1], mu[3]}, {sig[0], sig[2]}, {sig[1], sig[3]},
                                           rho, x, y);
      const double got = bivariate_mixture_logpdf(m, torch::tensor({x, y}, kF64)).item<double>();
      REQUIRE(got == doctest::Approx(std::log(oracle)).epsilon(1e-10));
    }
  }

  TEST_CASE("mixture density integrates to one") {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 1 + static_cast<int>(gen() % 5);
      std::vector<double> pi(k), mx(k), my(k), lsx(k), lsy(k), r(k);
      for (int c = 0; c < k; ++c) {
        pi[c] = u(gen);
        mx[c] = 2 * u(gen);
        my[c] = 2 * u(gen);
        lsx[c] = 0.8 * u(gen);
        lsy[c] = 0.8 * u(gen);
        r[c] = std::atanh(0.9 * u(gen));
      }
      auto m = mixture_from_raw(raw_mixture(pi, mx, my, lsx, lsy, r));
      const auto mu = m.mu.reshape({k, 2});
      const auto sg = m.sigma.reshape({k, 2});
      const double x0 = (mu.select(1, 0) - 5 * sg.select(1, 0)).min().item<double>();
      const double x1 = (mu.select(1, 0) + 5 * sg.select(1, 0)).max().item<double>();
      const double y0 = (mu.select(1, 1) - 5 * sg.select(1, 1)).min().item<double>();
      const double y1 = (mu.select(1, 1) + 5 * sg.select(1, 1)).max().item<double>();
      const int n = 700;
      const double dx = (x1 - x0) / n, dy = (y1 - y0) / n;
      auto xs = torch::arange(n, kF64) * dx + x0 + dx / 2;
      auto ys = torch::arange(n, kF64) * dy + y0 + dy / 2;
      auto grid = torch::stack(torch::meshgrid({xs, ys}, "ij"), -1).reshape({-1, 2});
      BivariateMixture b{m.log_pi.expand({grid.size(0), k}), m.mu.expand({grid.size(0), k, 2}),
                         m.sigma.expand({grid.size(0), k, 2}), m.rho.expand({grid.size(0), k}), m.saturated};
      const double mass = bivariate_mixture_logpdf(b, grid).exp().sum().item<double>() * dx * dy;
      REQUIRE(mass == doctest::Approx(1.0).epsilon(0.01));
    }
  }

  TEST_CASE("decoder steps are deterministic and keep their dimensions") {
    auto m = tiny_model();
    auto s = torch::randn({2, 3}, kF64);
    auto st = m->initial_state(s);
    auto a = m->step(m->start_token(2, kF64), st);
    auto b = m->step(m->start_token(2, kF64), st);
    CHECK(torch::equal(a.h, b.h));
    CHECK(torch::equal(a.c, b.c));
    CHECK(m->start_token(2, kF64).abs().sum().item<double>() == 0.0);
    for (int t = 0; t < 20; ++t) {
      st = m->step(m->encode_box({0.1, 0.2, 0.3, 0.4, 1}, kF64).unsqueeze(0).expand({2, -1}).contiguous(), st);
      REQUIRE(st.h.sizes() == torch::IntArrayRef{2, 4});
      REQUIRE(st.c.sizes() == torch::IntArrayRef{2, 4});
    }
    CHECK(error_code([&] { m->step(torch::zeros({2, 3}, kF64), st); }) == ErrorCode::kShapeMismatch);
    auto bad = torch::zeros({2, 7}, kF64);
    bad[0][0] = NAN;
    CHECK(error_code([&] { m->step(bad, st); }) == ErrorCode::kNonFinite);
  }

  TEST_CASE("first step ignores box content") {
    auto m = tiny_model();
    auto s = torch::randn({1, 3}, kF64);
    // Two layouts sharing their first box differ only after the first step.
    const BoxSpec first{0.1, 0.1, 0.2, 0.2, 0};
    auto a = sequence_nll(m, s, {make_layout({first})});
    auto b = sequence_nll(m, s, {make_layout({first, {0.6, 0.5, 0.3, 0.1, 1}})});
    auto st = m->step(m->start_token(1, kF64), m->initial_state(s));
    const double step0 = -torch::log_softmax(m->class_logits(st.h), -1)[0][0].item<double>();
    auto rest_a = a.class_sum[0].item<double>() - step0;
    auto rest_b = b.class_sum[0].item<double>() - step0;
    CHECK(rest_a > 0.0);
    CHECK(rest_b > 0.0);
    CHECK(torch::equal(st.h, m->step(m->start_token(1, kF64), m->initial_state(s)).h));
  }

  TEST_CASE("wh head depends on the position") {
    auto m = tiny_model();
    auto h = torch::randn({1, 4}, kF64);
    auto onehot = m->label_onehot(torch::tensor({1})).to(torch::kDouble);
    auto a = m->wh_mixture(h, onehot, torch::tensor({{0.1, 0.1}}, kF64));
    auto b = m->wh_mixture(h, onehot, torch::tensor({{0.8, 0.6}}, kF64));
    CHECK_FALSE(torch::allclose(a.mu, b.mu));
  }

  TEST_CASE("zero-weight wh head reduces to its bias") {
    auto m = tiny_model();
    {
      torch::NoGradGuard g;
      param(m, "head_wh.weight").zero_();
    }
    auto expect = mixture_from_raw(param(m, "head_wh.bias"), m->rho_limit());
    auto onehot = m->label_onehot(torch::tensor({0})).to(torch::kDouble);
    auto got = m->wh_mixture(torch::randn({1, 4}, kF64), onehot, torch::rand({1, 2}, kF64));
    CHECK(torch::allclose(got.mu[0], expect.mu));
    CHECK(torch::allclose(got.sigma[0], expect.sigma));
    CHECK(torch::allclose(got.rho[0], expect.rho));
    CHECK(torch::allclose(got.log_pi[0], expect.log_pi));
  }

  TEST_CASE("a model that predicts the sequence exactly has zero loss") {
    // hidden unit 0 stays 0 on START and saturates once a box with x > 0 is fed.
    auto m = tiny_model(3, 2, 2, 1);
    zero_all(m);
    const BoxSpec box{0.25, 0.3, 0.5, 0.4, 1};
    const double log_s = -0.5 * std::log(2 * std::numbers::pi);
    {
      torch::NoGradGuard g;
      auto w_ih = param(m, "cell.weight_ih");
      auto b_ih = param(m, "cell.bias_ih");
      b_ih[0] = 100.0;       // input gate
      w_ih[4][0] = 100.0;    // cell candidate reads x
      b_ih[6] = 100.0;       // output gate
      auto wc = param(m, "head_class.weight");
      auto bc = param(m, "head_class.bias");
      bc[1] = 50.0;
      wc[2][0] = 400.0;
      wc[1][0] = -400.0;
      param(m, "head_xy.bias").copy_(torch::tensor({0.0, box.x, box.y, log_s, log_s, 0.0}, kF64));
      param(m, "head_wh.bias").copy_(torch::tensor({0.0, box.w, box.h, log_s, log_s, 0.0}, kF64));
    }
    auto r = sequence_nll(m, torch::randn({1, 3}, kF64), {make_layout({box})});
    CHECK(std::abs(r.loss.item<double>()) < 1e-12);
    CHECK(std::abs(r.class_term.item<double>()) < 1e-12);
    CHECK(std::abs(r.coord_term.item<double>()) < 1e-12);
  }

  TEST_CASE("loss is linear in the weights") {
    auto m = tiny_model();
    auto s = torch::randn({2, 3}, kF64);
    const std::vector<LayoutSequence> ls = {make_layout({{0.1, 0.1, 0.2, 0.2, 0}}),
                                            make_layout({{0.2, 0.3, 0.4, 0.1, 1}, {0.5, 0.5, 0.2, 0.3, 0}})};
    auto one = sequence_nll(m, s, ls, {4.0, 1.0});
    auto two = sequence_nll(m, s, ls, {4.0, 2.0});
    CHECK(two.loss.item<double>() - one.loss.item<double>() ==
          doctest::Approx(one.coord_term.item<double>()).epsilon(1e-12));
    CHECK(one.loss.item<double>() ==
          doctest::Approx(4 * one.class_term.item<double>() + one.coord_term.item<double>()).epsilon(1e-12));
  }

  TEST_CASE("sequence NLL matches a step-by-step recomputation") {
    auto m = tiny_model(3, 2, 4, 2, 5);
    auto s = torch::randn({1, 3}, kF64);
    const auto layout = make_layout({{0.1, 0.2, 0.3, 0.4, 1}, {0.5, 0.4, 0.2, 0.5, 0}});
    double class_nll = 0.0, coord_nll = 0.0;
    {
      torch::NoGradGuard g;
      auto st = m->initial_state(s);
      auto prev = m->start_token(1, kF64);
      for (std::size_t t = 0; t <= layout.size(); ++t) {
        st = m->step(prev, st);
        const auto logits = values(m->class_logits(st.h));
        double lse = 0.0;
        for (double v : logits) lse += std::exp(v);
        const int target = t < layout.size() ? layout.boxes[t].label : 2;
        class_nll -= logits[static_cast<std::size_t>(target)] - std::log(lse);
        if (t == layout.size()) break;
        const auto& b = layout.boxes[t];
        auto onehot = m->label_onehot(torch::tensor({b.label})).to(torch::kDouble);
        auto xy = torch::tensor({{b.x, b.y}}, kF64);
        auto mxy = m->xy_mixture(st.h, onehot);
        auto mwh = m->wh_mixture(st.h, onehot, xy);
        for (auto [mix, px, py] : {std::tuple{mxy, b.x, b.y}, std::tuple{mwh, b.w, b.h}}) {
          const auto mu = values(mix.mu);
          const auto sg = values(mix.sigma);
          coord_nll -= std::log(density_oracle(values(mix.log_pi.exp()), {mu[0], mu[2]}, {mu[1], mu[3]},
                                               {sg[0], sg[2]}, {sg[1], sg[3]}, values(mix.rho), px, py));
        }
        prev = m->encode_box(b, kF64).unsqueeze(0);
      }
    }
    auto r = sequence_nll(m, s, {layout});
    CHECK(r.class_sum[0].item<double>() == doctest::Approx(class_nll).epsilon(1e-10));
    CHECK(r.coord_sum[0].item<double>() == doctest::Approx(coord_nll).epsilon(1e-10));
    CHECK(r.loss.item<double>() == doctest::Approx(4 * class_nll / 3 + coord_nll / 2).epsilon(1e-10));
    auto objects_only = sequence_nll(m, s, {layout}, {4.0, 1.0, ClassAveraging::kObjects});
    CHECK(objects_only.loss.item<double>() == doctest::Approx(4 * class_nll / 2 + coord_nll / 2).epsilon(1e-10));
  }

  TEST_CASE("sequence NLL gradients match finite differences") {
    auto m = tiny_model(3, 2, 3, 2, 11);
    auto s = torch::randn({2, 3}, kF64).requires_grad_(true);
    const std::vector<LayoutSequence> ls = {make_layout({{0.1, 0.2, 0.3, 0.4, 1}}),
                                            make_layout({{0.2, 0.1, 0.5, 0.3, 0}, {0.6, 0.5, 0.3, 0.2, 1}})};
    std::vector<torch::Tensor> inputs = m->parameters();
    inputs.push_back(s);
    const auto r = testing::check_gradients(inputs, [&] { return sequence_nll(m, s, ls).loss; });
    CHECK(r.elements > 100);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("empty and invalid sequences are rejected") {
    auto m = tiny_model();
    auto s = torch::randn({1, 3}, kF64);
    CHECK(error_code([&] { sequence_nll(m, s, {make_layout({})}); }) == ErrorCode::kInvalidArgument);
    CHECK(error_code([&] { sequence_nll(m, s, {make_layout({{0.1, 0.1, 0.1, 0.1, 5}})}); }) ==
          ErrorCode::kInvalidLabel);
    CHECK(error_code([&] { sequence_nll(m, torch::randn({2, 3}, kF64), {make_layout({{0.1, 0.1, 0.1, 0.1, 0}})}); }) ==
          ErrorCode::kShapeMismatch);
  }

  TEST_CASE("forced termination samples an empty layout") {
    auto m = tiny_model();
    {
      torch::NoGradGuard g;
      param(m, "head_class.weight").zero_();
      param(m, "head_class.bias").copy_(torch::tensor({-100.0, -100.0, 100.0}, kF64));
    }
    Rng rng(1);
    const auto out = sample_layout(m, torch::randn({1, 3}, kF64), rng, 20, 1.0 / 64);
    CHECK(out.layout.boxes.empty());
    CHECK_FALSE(out.truncated);
  }

  TEST_CASE("never-terminating model is truncated at max steps") {
    auto m = tiny_model();
    {
      torch::NoGradGuard g;
      param(m, "head_class.weight").zero_();
      param(m, "head_class.bias").copy_(torch::tensor({100.0, -100.0, -100.0}, kF64));
    }
    Rng rng(1);
    const auto out = sample_layout(m, torch::randn({1, 3}, kF64), rng, 7, 1.0 / 64);
    CHECK(out.layout.size() == 7);
    CHECK(out.truncated);
  }

  TEST_CASE("sampling is deterministic and in range") {
    auto m = tiny_model(3, 2, 4, 2, 13);
    auto s = torch::randn({1, 3}, kF64);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng a(seed), b(seed);
      const auto la = sample_layout(m, s, a, 20, 1.0 / 64);
      const auto lb = sample_layout(m, s, b, 20, 1.0 / 64);
      REQUIRE(la.layout == lb.layout);
      for (const auto& box : la.layout.boxes) {
        REQUIRE(box.x >= 0.0);
        REQUIRE(box.y >= 0.0);
        REQUIRE(box.w >= 1.0 / 64);
        REQUIRE(box.h >= 1.0 / 64);
        REQUIRE(box.x + box.w <= 1.0 + 1e-12);
        REQUIRE(box.y + box.h <= 1.0 + 1e-12);
      }
    }
  }

  TEST_CASE("degenerate mixtures sample their means") {
    auto m = tiny_model(3, 2, 4, 2);
    const double tiny = std::log(1e-6);
    {
      torch::NoGradGuard g;
      param(m, "head_class.weight").zero_();
      param(m, "head_class.bias").copy_(torch::tensor({100.0, -100.0, -100.0}, kF64));
      param(m, "head_xy.weight").zero_();
      param(m, "head_wh.weight").zero_();
      param(m, "head_xy.bias").copy_(torch::tensor({0.0, 0.0, 0.3, 0.3, 0.4, 0.4, tiny, tiny, tiny, tiny, 0.0, 0.0}, kF64));
      param(m, "head_wh.bias").copy_(torch::tensor({0.0, 0.0, 0.2, 0.2, 0.1, 0.1, tiny, tiny, tiny, tiny, 0.0, 0.0}, kF64));
    }
    Rng rng(4);
    const auto out = sample_layout(m, torch::randn({1, 3}, kF64), rng, 5, 1.0 / 64);
    REQUIRE(out.layout.size() == 5);
    for (const auto& b : out.layout.boxes) {
      CHECK(std::abs(b.x - 0.3) < 1e-3);
      CHECK(std::abs(b.y - 0.4) < 1e-3);
      CHECK(std::abs(b.w - 0.2) < 1e-3);
      CHECK(std::abs(b.h - 0.1) < 1e-3);
    }
  }

  TEST_CASE("bivariate sampler reproduces moments") {
    Rng rng(3);
    const int n = 200000;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
      auto [x, y] = sample_bivariate_mixture({1.0}, {1.0, -2.0}, {0.5, 2.0}, {0.6}, rng);
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double mx = sx / n, my = sy / n;
    const double vx = sxx / n - mx * mx, vy = syy / n - my * my;
    const double corr = (sxy / n - mx * my) / std::sqrt(vx * vy);
    CHECK(mx == doctest::Approx(1.0).epsilon(0.01));
    CHECK(my == doctest::Approx(-2.0).epsilon(0.01));
    CHECK(std::sqrt(vx) == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::sqrt(vy) == doctest::Approx(2.0).epsilon(0.01));
    CHECK(corr == doctest::Approx(0.6).epsilon(0.01));
    std::vector<int> hits(3, 0);
    for (int i = 0; i < 30000; ++i) ++hits[static_cast<std::size_t>(sample_categorical({0.2, 0.0, 0.8}, rng))];
    CHECK(hits[1] == 0);
    CHECK(hits[0] / 30000.0 == doctest::Approx(0.2).epsilon(0.05));
  }
}
