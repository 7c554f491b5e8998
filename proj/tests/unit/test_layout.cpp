#include <algorithm>
#include <numeric>
#include <random>

#include "hiergen/json_io.hpp"
#include "hiergen/layout.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace hiergen;
using testing::error_code;

namespace {

// Cell (i, j) is covered when its center lies in [x, x + w) x [y, y + h);
// a box covering no center keeps the single cell containing its corner.
LabelGrid containment_oracle(const BoxSpec& b, int H, int W, int L) {
  LabelGrid g(H, W, L);
  bool any = false;
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const double cy = (i + 0.5) / H;
      const double cx = (j + 0.5) / W;
      if (cx >= b.x && cx < b.x + b.w && cy >= b.y && cy < b.y + b.h) {
        g.at(i, j, b.label) = 1;
        any = true;
      }
    }
  }
  if (!any) {
    int i = std::min(H - 1, static_cast<int>(b.y * H));
    int j = std::min(W - 1, static_cast<int>(b.x * W));
    g.at(i, j, b.label) = 1;
  }
  return g;
}

LabelGrid random_tensor(std::mt19937_64& gen, int H, int W, int L) {
  LabelGrid g(H, W, L);
  for (auto& v : g.data()) v = static_cast<std::uint8_t>(gen() % 2);
  return g;
}

InstanceMask random_mask(std::mt19937_64& gen, int H, int W) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  InstanceMask m(H, W);
  for (auto& v : m.values()) v = u(gen);
  return m;
}

LayoutSequence three_boxes() {
  LayoutSequence l;
  l.class_names = {"a", "b", "c"};
  l.boxes = {{0.1, 0.1, 0.2, 0.2, 0}, {0.5, 0.5, 0.3, 0.3, 1}, {0.2, 0.6, 0.1, 0.1, 2}};
  return l;
}

}  // namespace

TEST_SUITE("layout-core") {
  TEST_CASE("tensorize full-image box fills its channel") {
    const auto t = tensorize_box({0, 0, 1, 1, 2}, 4, 4, 3);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        CHECK(t.at(i, j, 2) == 1);
        CHECK(t.at(i, j, 0) == 0);
        CHECK(t.at(i, j, 1) == 0);
      }
    }
  }

  TEST_CASE("tensorize right half covers columns 2 and 3") {
    const auto t = tensorize_box({0.5, 0, 0.5, 1, 0}, 4, 4, 1);
    CHECK(t.count_nonzero() == 8);
    CHECK(t == containment_oracle({0.5, 0, 0.5, 1, 0}, 4, 4, 1));
    for (int i = 0; i < 4; ++i) CHECK((t.at(i, 2, 0) == 1 && t.at(i, 3, 0) == 1));
  }

  TEST_CASE("degenerate box occupies the nearest cell") {
    const auto t = tensorize_box({0.2, 0.2, 0, 0, 1}, 8, 8, 2);
    CHECK(t.count_nonzero() == 1);
    CHECK(t.at(1, 1, 1) == 1);
  }

  TEST_CASE("tensorize matches containment oracle on 1000 random boxes") {
    std::mt19937_64 gen(7);
    for (int n = 0; n < 1000; ++n) {
      const int H = 1 + static_cast<int>(gen() % 20);
      const int W = 1 + static_cast<int>(gen() % 20);
      const auto b = testing::random_box(gen, 4);
      REQUIRE(tensorize_box(b, H, W, 4) == containment_oracle(b, H, W, 4));
    }
  }

  TEST_CASE("tensorize rejects an out-of-range label") {
    CHECK(error_code([] { tensorize_box({0, 0, 1, 1, 3}, 4, 4, 3); }) == ErrorCode::kInvalidLabel);
  }

  TEST_CASE("box region is the label channel of the box tensor") {
    std::mt19937_64 gen(3);
    for (int n = 0; n < 200; ++n) {
      const auto b = testing::random_box(gen, 3);
      const auto t = tensorize_box(b, 9, 7, 3);
      const auto r = box_region(b, 9, 7);
      for (int i = 0; i < 9; ++i) {
        for (int j = 0; j < 7; ++j) REQUIRE(r.at(i, j) == static_cast<float>(t.at(i, j, b.label)));
      }
    }
  }

  TEST_CASE("aggregate of a singleton is the identity") {
    std::mt19937_64 gen(1);
    const auto t = random_tensor(gen, 5, 5, 2);
    CHECK(aggregate_box_tensors(std::vector{t}) == t);
  }

  TEST_CASE("aggregate of disjoint boxes equals their sum") {
    const auto a = tensorize_box({0, 0, 0.5, 0.5, 0}, 8, 8, 2);
    const auto b = tensorize_box({0.5, 0.5, 0.5, 0.5, 1}, 8, 8, 2);
    const auto m = aggregate_box_tensors(std::vector{a, b});
    for (std::size_t n = 0; n < m.data().size(); ++n) CHECK(m.data()[n] == a.data()[n] + b.data()[n]);
  }

  TEST_CASE("aggregate of identical tensors is idempotent") {
    std::mt19937_64 gen(2);
    const auto t = random_tensor(gen, 6, 4, 3);
    CHECK(aggregate_box_tensors(std::vector{t, t}) == t);
  }

  TEST_CASE("aggregate is commutative and associative") {
    std::mt19937_64 gen(11);
    for (int n = 0; n < 100; ++n) {
      const auto a = random_tensor(gen, 5, 6, 3);
      const auto b = random_tensor(gen, 5, 6, 3);
      const auto c = random_tensor(gen, 5, 6, 3);
      const auto ab = aggregate_box_tensors(std::vector{a, b});
      REQUIRE(ab == aggregate_box_tensors(std::vector{b, a}));
      const auto left = aggregate_box_tensors(std::vector{ab, c});
      const auto right = aggregate_box_tensors(std::vector{a, aggregate_box_tensors(std::vector{b, c})});
      REQUIRE(left == right);
      REQUIRE(left == aggregate_box_tensors(std::vector{a, b, c}));
    }
  }

  TEST_CASE("aggregate matches a per-cell max oracle") {
    std::mt19937_64 gen(5);
    for (int n = 0; n < 1000; ++n) {
      std::vector<LabelGrid> ts;
      const int k = 1 + static_cast<int>(gen() % 4);
      for (int t = 0; t < k; ++t) ts.push_back(tensorize_box(testing::random_box(gen, 3), 6, 6, 3));
      const auto m = aggregate_box_tensors(ts);
      for (std::size_t c = 0; c < m.data().size(); ++c) {
        std::uint8_t expect = 0;
        for (const auto& t : ts) expect = std::max(expect, t.data()[c]);
        REQUIRE(m.data()[c] == expect);
      }
    }
  }

  TEST_CASE("aggregate errors on empty input and shape mismatch") {
    CHECK(error_code([] { aggregate_box_tensors({}); }) == ErrorCode::kInvalidArgument);
    CHECK(error_code([] { aggregate_box_tensors(std::vector{LabelGrid(2, 2, 1), LabelGrid(3, 2, 1)}); }) ==
          ErrorCode::kShapeMismatch);
  }

  TEST_CASE("mask aggregation sums values") {
    CHECK(aggregate_masks(std::vector{InstanceMask(3, 3, 0.25f)}) == InstanceMask(3, 3, 0.25f));
    const auto two = aggregate_masks(std::vector{InstanceMask(3, 3, 1.0f), InstanceMask(3, 3, 1.0f)});
    for (float v : two.values()) CHECK(v == 2.0f);
    std::vector<InstanceMask> ms(3, InstanceMask(4, 4));
    for (auto& m : ms) m.at(2, 1) = 1.0f;
    const auto s = aggregate_masks(ms);
    CHECK(s.at(2, 1) == 3.0f);
    CHECK(s.at(0, 0) == 0.0f);
  }

  TEST_CASE("mask aggregation matches a per-cell sum oracle") {
    std::mt19937_64 gen(8);
    for (int n = 0; n < 1000; ++n) {
      std::vector<InstanceMask> ms;
      const int k = 1 + static_cast<int>(gen() % 4);
      for (int t = 0; t < k; ++t) ms.push_back(random_mask(gen, 5, 4));
      const auto s = aggregate_masks(ms);
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 4; ++j) {
          float expect = 0.0f;
          for (const auto& m : ms) expect += m.at(i, j);
          REQUIRE(s.at(i, j) == expect);
        }
      }
    }
  }

  TEST_CASE("compose a single binary mask") {
    InstanceMask m(4, 4);
    m.at(1, 2) = 1.0f;
    m.at(3, 0) = 1.0f;
    const std::vector<int> labels{2};
    const auto map = compose_label_map(std::vector{m}, labels, 3);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        CHECK(map.at(i, j, 2) == static_cast<std::uint8_t>(m.at(i, j)));
        CHECK(map.at(i, j, 0) == 0);
      }
    }
  }

  TEST_CASE("overlapping same-class masks stay binary") {
    const std::vector<int> labels{1, 1};
    const auto map = compose_label_map(std::vector{InstanceMask(3, 3, 1.0f), InstanceMask(3, 3, 1.0f)}, labels, 2);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(map.at(i, j, 1) == 1);
    }
  }

  TEST_CASE("threshold boundary uses >=") {
    InstanceMask m(1, 2);
    m.at(0, 0) = 0.49f;
    m.at(0, 1) = 0.5f;
    const std::vector<int> labels{0};
    const auto map = compose_label_map(std::vector{m}, labels, 1, 0.5);
    CHECK(map.at(0, 0, 0) == 0);
    CHECK(map.at(0, 1, 0) == 1);
  }

  TEST_CASE("compose matches a per-cell oracle and is order invariant") {
    std::mt19937_64 gen(4);
    for (int n = 0; n < 1000; ++n) {
      const int k = 1 + static_cast<int>(gen() % 4);
      std::vector<InstanceMask> ms;
      std::vector<int> labels;
      for (int t = 0; t < k; ++t) {
        ms.push_back(random_mask(gen, 5, 5));
        labels.push_back(static_cast<int>(gen() % 3));
      }
      const auto map = compose_label_map(ms, labels, 3);
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 5; ++i) {
          for (int j = 0; j < 5; ++j) {
            bool on = false;
            for (int t = 0; t < k; ++t) on = on || (labels[t] == c && ms[t].at(i, j) >= 0.5f);
            REQUIRE(map.at(i, j, c) == (on ? 1 : 0));
          }
        }
      }
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), gen);
      std::vector<InstanceMask> pm;
      std::vector<int> pl;
      for (auto p : perm) {
        pm.push_back(ms[p]);
        pl.push_back(labels[p]);
      }
      REQUIRE(compose_label_map(pm, pl, 3) == map);
    }
  }

  TEST_CASE("compose validates its inputs") {
    const std::vector<int> bad{5};
    CHECK(error_code([&] { compose_label_map(std::vector{InstanceMask(2, 2)}, bad, 3); }) == ErrorCode::kInvalidLabel);
    const std::vector<int> two{0, 0};
    CHECK(error_code([&] { compose_label_map(std::vector{InstanceMask(2, 2)}, two, 3); }) == ErrorCode::kShapeMismatch);
    const std::vector<int> none;
    CHECK(compose_label_map({}, none, 2, 3, 3).count_nonzero() == 0);
  }

  TEST_CASE("edits: add, move clamp, remove out of range") {
    LayoutSequence l = three_boxes();
    l.boxes.pop_back();
    CHECK(apply_layout_edit(l, edit::Add{{0.1, 0.1, 0.1, 0.1, 1}}).size() == 3);

    LayoutSequence one;
    one.class_names = {"a"};
    one.boxes = {{0.5, 0.2, 0.3, 0.3, 0}};
    const auto moved = apply_layout_edit(one, edit::Move{0, 0.9, 0.0});
    CHECK(moved.boxes[0].x + moved.boxes[0].w <= 1.0);
    CHECK(moved.boxes[0].w == doctest::Approx(0.3));
    CHECK(moved.boxes[0].x == doctest::Approx(0.7));

    CHECK(error_code([&] { apply_layout_edit(three_boxes(), edit::Remove{5}); }) == ErrorCode::kOutOfRange);
    CHECK(apply_layout_edit(three_boxes(), edit::Remove{1}).boxes[1] == three_boxes().boxes[2]);
    CHECK(error_code([&] { apply_layout_edit(three_boxes(), edit::Relabel{0, 9}); }) == ErrorCode::kInvalidLabel);
    CHECK(apply_layout_edit(three_boxes(), edit::Relabel{0, 2}).boxes[0].label == 2);
  }

  TEST_CASE("edits never leave the unit square") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int n = 0; n < 2000; ++n) {
      LayoutSequence l = three_boxes();
      const std::size_t idx = gen() % 3;
      LayoutEdit e;
      switch (gen() % 3) {
        case 0: e = edit::Move{idx, d(gen), d(gen)}; break;
        case 1: e = edit::Resize{idx, d(gen), d(gen)}; break;
        default: e = edit::Add{{d(gen), d(gen), d(gen), d(gen), 0}}; break;
      }
      const auto out = apply_layout_edit(l, e);
      for (const auto& b : out.boxes) {
        REQUIRE(b.x >= 0.0);
        REQUIRE(b.y >= 0.0);
        REQUIRE(b.w >= 0.0);
        REQUIRE(b.h >= 0.0);
        REQUIRE(b.x + b.w <= 1.0);
        REQUIRE(b.y + b.h <= 1.0);
      }
      CHECK_NOTHROW(validate_layout(out));
    }
  }

  TEST_CASE("layout JSON round trip is field exact") {
    std::mt19937_64 gen(23);
    for (int n = 0; n < 200; ++n) {
      LayoutSequence l;
      l.class_names = {"circle", "square", "triangle"};
      const int T = static_cast<int>(gen() % 6);
      for (int t = 0; t < T; ++t) l.boxes.push_back(testing::random_box(gen, 3));
      REQUIRE(layout_from_json(layout_to_json(l)) == l);
    }
  }

  TEST_CASE("layout validation reports field paths") {
    auto l = three_boxes();
    l.boxes[1].label = 7;
    CHECK(testing::error_field([&] { validate_layout(l); }) == "layout.boxes[1].label");
    l = three_boxes();
    l.boxes[2].w = 0.95;
    CHECK(testing::error_field([&] { validate_layout(l); }) == "layout.boxes[2].w");
    CHECK(error_code([] { layout_from_json("{\"classes\": [\"a\"], \"boxes\": [{\"x\": 0}]}"); }) == ErrorCode::kParse);
    CHECK(error_code([] { layout_from_json("not json"); }) == ErrorCode::kParse);
  }

  TEST_CASE("RLE round trip at threshold") {
    std::mt19937_64 gen(29);
    for (int n = 0; n < 200; ++n) {
      const auto m = random_mask(gen, 1 + static_cast<int>(gen() % 9), 1 + static_cast<int>(gen() % 9));
      const auto back = rle_decode(rle_encode(m));
      for (int i = 0; i < m.height(); ++i) {
        for (int j = 0; j < m.width(); ++j) REQUIRE(back.at(i, j) == (m.at(i, j) >= 0.5f ? 1.0f : 0.0f));
      }
      REQUIRE(parse_rle(rle_json(rle_encode(m))) == rle_encode(m));
    }
  }
}
