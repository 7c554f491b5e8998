#include <random>

#include "gradcheck.hpp"
#include "hiergen/shapeworld.hpp"
#include "hiergen/text_encoder.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace hiergen;
using testing::error_code;

namespace {

TextEncoder tiny_encoder(std::int64_t vocab, std::uint64_t seed = 1) {
  torch::manual_seed(seed);
  TextConfig cfg;
  cfg.token_dim = 3;
  cfg.hidden_dim = 4;
  cfg.embedding_dim = 5;
  TextEncoder enc(vocab, cfg);
  enc->to(torch::kDouble);
  enc->eval();
  return enc;
}

}  // namespace

TEST_SUITE("text-encoder") {
  TEST_CASE("tokenizer lowercases and strips punctuation") {
    CHECK(tokenize("Two RED circles, on the left!") ==
          std::vector<std::string>{"two", "red", "circles", "on", "the", "left"});
    CHECK(tokenize("  ").empty());
  }

  TEST_CASE("vocabulary frequency threshold") {
    const auto v = Vocabulary::build({"a b", "a"}, 2);
    CHECK(v.contains("a"));
    CHECK_FALSE(v.contains("b"));
    CHECK(Vocabulary::build({"x y z"}, 1).size() == 3 + Vocabulary::kNumReserved);
  }

  TEST_CASE("vocabulary ids are deterministic and round trip") {
    const std::vector<std::string> corpus = {"the cat sat", "the dog ran", "a cat"};
    const auto a = Vocabulary::build(corpus, 1);
    const auto b = Vocabulary::build(corpus, 1);
    CHECK(a == b);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a.id(a.token(i)) == i);
    CHECK(a.id("cat") == Vocabulary::kNumReserved);  // most frequent first, ties alphabetical
    CHECK(a.id("the") == Vocabulary::kNumReserved + 1);
    CHECK(Vocabulary::from_json(a.to_json()) == a);
    CHECK(error_code([] { Vocabulary::from_json(Json::array({Json::array({"a", 3})})); }) == ErrorCode::kParse);
  }

  TEST_CASE("unseen tokens map to UNK") {
    const auto v = Vocabulary::build({"red circle"}, 1);
    CHECK(v.encode("red elephant") == std::vector<std::int64_t>{v.id("red"), Vocabulary::kUnk});
  }

  TEST_CASE("encoding is deterministic, finite and fixed-size") {
    ShapeWorldConfig sw;
    std::vector<std::string> corpus;
    for (std::uint64_t i = 0; i < 1000; ++i) corpus.push_back(scene_captions(sample_scene(sw, i))[i % 2]);
    const auto vocab = Vocabulary::build(corpus, 1);
    torch::manual_seed(0);
    TextEncoder enc(vocab.size(), TextConfig{});
    enc->eval();
    torch::NoGradGuard g;
    const auto all = encode_texts(enc, vocab, corpus);
    CHECK(all.sizes() == torch::IntArrayRef{1000, 128});
    CHECK(torch::isfinite(all).all().item<bool>());
    const auto again = encode_texts(enc, vocab, {corpus[3]});
    CHECK(torch::equal(again[0], encode_texts(enc, vocab, {corpus[3]})[0]));
    // Padding in a batch does not change a row's embedding.
    CHECK(torch::allclose(again[0], all[3], 1e-5, 1e-6));
    for (const char* text : {"red", "red circle", "a b c d e f g h i j k l"}) {
      CHECK(encode_texts(enc, vocab, {text}).size(1) == 128);
    }
    CHECK(error_code([&] { encode_texts(enc, vocab, {"!!"}); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("encoder gradients match finite differences") {
    const auto vocab = Vocabulary::build({"a b c", "b c d"}, 1);
    auto enc = tiny_encoder(vocab.size());
    const auto w = torch::randn({2, 5}, torch::kDouble);
    const auto r = testing::check_gradients(enc->parameters(), [&] {
      return (encode_texts(enc, vocab, {"a b c", "d a"}) * w).sum();
    });
    CHECK(r.max_rel_error < 1e-4);
  }
}
