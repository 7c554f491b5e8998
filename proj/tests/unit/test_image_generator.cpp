#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hiergen/image_generator.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace hiergen;
using testing::error_code;

namespace {

constexpr int kClasses = 3;
constexpr int kText = 5;
constexpr int kSize = 16;

ImageConfig tiny_config(bool attention = true) {
  ImageConfig cfg;
  cfg.base_channels = 4;
  cfg.num_down = 2;
  cfg.feature_dim = 6;
  cfg.background_dim = 2;
  cfg.noise_dim = 3;
  cfg.num_residual = 1;
  cfg.attention = attention;
  cfg.disc_channels = 4;
  cfg.disc_down = 2;
  cfg.disc_text_dim = 3;
  return cfg;
}

ImageGenerator tiny_generator(bool attention = true, std::uint64_t seed = 1) {
  torch::manual_seed(seed);
  return ImageGenerator(kClasses, kText, kSize, tiny_config(attention));
}

torch::Tensor random_label_map(std::int64_t n, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto labels = torch::randint(0, kClasses + 1, {n, kSize, kSize}, gen, torch::kLong);
  // label kClasses stands for background: all-zero one-hot
  return torch::one_hot(labels, kClasses + 1).narrow(3, 0, kClasses).permute({0, 3, 1, 2}).to(torch::kFloat);
}

}  // namespace

TEST_SUITE("image-generator") {
  TEST_CASE("gating examples") {
    auto a = torch::randn({2, 4, 3, 3});
    CHECK(torch::allclose(gate_layout(a, torch::zeros({2, 4})), 0.5 * a));
    CHECK(torch::allclose(gate_layout(a, torch::full({2, 4}, 20.0)), a, 1e-6, 1e-6));
    CHECK(gate_layout(a, torch::full({2, 4}, -40.0)).abs().max().item<float>() < 1e-12f);
    CHECK(error_code([&] { gate_layout(a, torch::zeros({2, 3})); }) == ErrorCode::kShapeMismatch);
  }

  TEST_CASE("gating matches an elementwise loop") {
    const auto f64 = torch::TensorOptions().dtype(torch::kDouble);
    for (int trial = 0; trial < 50; ++trial) {
      auto a = torch::randn({2, 3, 4, 5}, f64);
      auto g = torch::randn({2, 3}, f64) * 3;
      auto out = gate_layout(a, g);
      auto acc = out.accessor<double, 4>();
      auto aa = a.accessor<double, 4>();
      auto ga = g.accessor<double, 2>();
      double max_err = 0.0;
      for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) {
              const double want = aa[n][c][y][x] / (1.0 + std::exp(-ga[n][c]));
              max_err = std::max(max_err, std::abs(acc[n][c][y][x] - want));
            }
      CHECK(max_err < 1e-12);
    }
  }

  TEST_CASE("gating gradients match finite differences") {
    const auto f64 = torch::TensorOptions().dtype(torch::kDouble);
    auto a = torch::randn({1, 2, 3, 3}, f64).requires_grad_(true);
    auto g = torch::randn({1, 2}, f64).requires_grad_(true);
    auto w = torch::randn({1, 2, 3, 3}, f64);
    auto r = testing::check_gradients({a, g}, [&] { return (gate_layout(a, g) * w).sum(); });
    CHECK(r.elements == 20);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("output shape, range and determinism") {
    auto m = random_label_map(2, 3);
    auto s = torch::randn({2, kText});
    auto z = torch::randn({2, 3});
    torch::NoGradGuard no_grad;
    auto a = tiny_generator(true, 7)->forward(m, s, z);
    auto b = tiny_generator(true, 7)->forward(m, s, z);
    CHECK(a.sizes() == torch::IntArrayRef{2, 3, kSize, kSize});
    CHECK(torch::equal(a, b));
    CHECK(a.min().item<float>() >= -1.0f);
    CHECK(a.max().item<float>() <= 1.0f);
    auto zero = tiny_generator(true, 7)->forward(torch::zeros({1, kClasses, kSize, kSize}), s[0].unsqueeze(0), z[0].unsqueeze(0));
    CHECK(torch::isfinite(zero).all().item<bool>());
    CHECK(zero.abs().max().item<float>() <= 1.0f);
  }

  TEST_CASE("noise and text both change the image") {
    auto g = tiny_generator();
    auto m = random_label_map(1, 4);
    auto s = torch::randn({1, kText});
    torch::NoGradGuard no_grad;
    auto base = g->forward(m, s, torch::zeros({1, 3}));
    CHECK_FALSE(torch::allclose(base, g->forward(m, s, torch::ones({1, 3}))));
    CHECK_FALSE(torch::allclose(base, g->forward(m, s + 1, torch::zeros({1, 3}))));
  }

  TEST_CASE("every decoder stage reads the label map") {
    auto g = tiny_generator();
    auto m = random_label_map(1, 5);
    auto s = torch::randn({1, kText});
    auto z = torch::randn({1, 3});
    torch::NoGradGuard no_grad;
    auto base = g->forward(m, s, z);
    CHECK(g->decoder_stages() == 3);
    for (int stage = 0; stage < g->decoder_stages(); ++stage) {
      CHECK((base - g->forward(m, s, z, stage)).abs().max().item<float>() > 1e-5f);
    }
    CHECK(torch::equal(base, g->forward(m, s, z, g->decoder_stages())));
  }

  TEST_CASE("the gate only matters with attention") {
    auto m = random_label_map(1, 6);
    auto s = torch::randn({1, kText});
    auto z = torch::randn({1, 3});
    for (bool attention : {true, false}) {
      auto g = tiny_generator(attention, 8);
      torch::NoGradGuard no_grad;
      auto before = g->forward(m, s, z);
      for (auto& item : g->named_parameters()) {
        if (item.key().rfind("gate.", 0) == 0) item.value().add_(1.0);
      }
      const bool same = torch::equal(before, g->forward(m, s, z));
      CHECK(same == !attention);
    }
  }

  TEST_CASE("invalid inputs are rejected") {
    auto g = tiny_generator();
    auto m = random_label_map(1, 1);
    CHECK(error_code([&] { g->forward(m, torch::zeros({1, kText + 1}), torch::zeros({1, 3})); }) ==
          ErrorCode::kShapeMismatch);
    CHECK(error_code([&] { g->forward(m, torch::zeros({1, kText}), torch::zeros({1, 2})); }) ==
          ErrorCode::kShapeMismatch);
    CHECK(error_code([&] { g->forward(torch::zeros({1, kClasses, 8, 8}), torch::zeros({1, kText}), torch::zeros({1, 3})); }) ==
          ErrorCode::kShapeMismatch);
    CHECK(error_code([&] { g->forward(m, torch::full({1, kText}, NAN), torch::zeros({1, 3})); }) ==
          ErrorCode::kNonFinite);
    auto cfg = tiny_config();
    cfg.num_down = 5;
    CHECK(error_code([&] { ImageGenerator(kClasses, kText, 24, cfg); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("discriminator scores lie in (0, 1)") {
    torch::manual_seed(9);
    ImageDiscriminator d(kClasses, kText, tiny_config());
    auto logits = d->forward(random_label_map(4, 2), torch::randn({4, kText}), torch::rand({4, 3, kSize, kSize}) * 2 - 1);
    CHECK(logits.sizes() == torch::IntArrayRef{4});
    auto p = torch::sigmoid(logits);
    CHECK(p.min().item<float>() > 0.0f);
    CHECK(p.max().item<float>() < 1.0f);
    CHECK(error_code([&] { d->forward(random_label_map(4, 2), torch::randn({3, kText}), torch::zeros({4, 3, kSize, kSize})); }) ==
          ErrorCode::kShapeMismatch);
  }

  TEST_CASE("value function examples") {
    CHECK(image_adv_value(0.5, 0.5, 0.5) == doctest::Approx(3 * std::log(0.5)).epsilon(1e-12));
    CHECK(image_adv_value(0.5, 0.5, 0.5) == doctest::Approx(-2.079442).epsilon(1e-6));
    CHECK(error_code([] { image_adv_value(1.0, 0.5, 0.5); }) == ErrorCode::kOutOfRange);
    CHECK(error_code([] { image_adv_value(0.5, 0.0, 0.5); }) == ErrorCode::kOutOfRange);
    CHECK(image_total_loss(-1.0, 0.5) == doctest::Approx(4.0));
    CHECK(image_total_loss(0.0, 0.0) == 0.0);
    CHECK(image_total_loss(2.0, 0.0, 0.5, 3.0) == doctest::Approx(1.0));
  }

  TEST_CASE("batched value agrees with the scalar form") {
    std::mt19937_64 gen(10);
    std::normal_distribution<double> nd(0.0, 2.0);
    const auto f64 = torch::TensorOptions().dtype(torch::kDouble);
    for (int trial = 0; trial < 100; ++trial) {
      auto a = torch::empty({3}, f64), b = torch::empty({3}, f64), c = torch::empty({3}, f64);
      double want = 0.0;
      for (int i = 0; i < 3; ++i) {
        a[i] = nd(gen);
        b[i] = nd(gen);
        c[i] = nd(gen);
        auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        want += image_adv_value(sig(a[i].item<double>()), sig(b[i].item<double>()), sig(c[i].item<double>())) / 3;
      }
      CHECK(image_adv_value_from_logits(a, b, c).item<double>() == doctest::Approx(want).epsilon(1e-10));
    }
  }

  TEST_CASE("mismatched text never pairs a row with its own text") {
    auto s = torch::arange(12, torch::kFloat).reshape({4, 3});
    for (std::int64_t shift = 1; shift < 4; ++shift) {
      auto m = mismatched_embeddings(s, shift);
      for (std::int64_t i = 0; i < 4; ++i) {
        CHECK_FALSE(torch::equal(m[i], s[i]));
        CHECK(torch::equal(m[i], s[(i - shift + 4) % 4]));
      }
    }
    CHECK(error_code([&] { mismatched_embeddings(s, 0); }) == ErrorCode::kOutOfRange);
    CHECK(error_code([&] { mismatched_embeddings(s, 4); }) == ErrorCode::kOutOfRange);
    CHECK(error_code([&] { mismatched_embeddings(s.narrow(0, 0, 1), 1); }) == ErrorCode::kInvalidArgument);
  }
}
