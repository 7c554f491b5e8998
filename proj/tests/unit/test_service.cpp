#include <atomic>

#include "httplib.h"

#include "hiergen/json_io.hpp"
#include "hiergen/log.hpp"
#include "hiergen/service.hpp"
#include "support.hpp"
#include "doctest.h"

using namespace hiergen;

namespace {

Config toy_config() {
  log::set_level(log::Level::kError);
  Json j = {{"data", {{"image_size", 32}, {"num_classes", 6}}},
            {"text", {{"token_dim", 8}, {"hidden_dim", 8}, {"embedding_dim", 8}}},
            {"box", {{"hidden_dim", 16}, {"mixture_components", 2}}},
            {"shape",
             {{"mask_size", 16}, {"base_channels", 4}, {"lstm_channels", 4}, {"num_residual", 1}, {"noise_dim", 2}}},
            {"image",
             {{"base_channels", 4}, {"num_down", 2}, {"feature_dim", 8}, {"background_dim", 2}, {"noise_dim", 2},
              {"num_residual", 1}}}};
  return parse_config(j);
}

std::shared_ptr<const Pipeline> toy_pipeline(std::uint64_t seed = 1) {
  return Pipeline::random(toy_config(), {"a red circle", "two blue squares on the left"}, seed);
}

Json body_of(const HttpResponse& r) { return Json::parse(r.body); }

Json two_box_layout(const Pipeline& p) {
  return {{"classes", p.class_names()},
          {"boxes",
           {{{"x", 0.1}, {"y", 0.2}, {"w", 0.3}, {"h", 0.25}, {"label", 1}},
            {{"x", 0.5}, {"y", 0.5}, {"w", 0.4}, {"h", 0.4}, {"label", 0}}}}};
}

}  // namespace

TEST_SUITE("service-api") {
  TEST_CASE("meta reports classes, grid and model version") {
    auto p = toy_pipeline();
    Service s(p, nullptr);
    auto r = s.handle("GET", "/v1/meta", "");
    REQUIRE(r.status == 200);
    auto j = body_of(r);
    CHECK(j.at("classes") == Json(p->class_names()));
    CHECK(j.at("grid") == 32);
    CHECK(j.at("model_version") == p->model_version());
  }

  TEST_CASE("unknown paths and wrong methods") {
    Service s(toy_pipeline(), nullptr);
    CHECK(s.handle("GET", "/v1/nope", "").status == 404);
    CHECK(s.handle("POST", "/v1/meta", "{}").status == 405);
    CHECK(s.handle("GET", "/v1/layout/sample", "").status == 405);
    CHECK(s.handle("DELETE", "/v1/pipeline/generate", "").status == 405);
    CHECK(s.handle("GET", "/v1/admin/reload", "").status == 405);
  }

  TEST_CASE("layout sampling is reproducible and validates its request") {
    Service s(toy_pipeline(), nullptr);
    const std::string req = R"({"text": "a red circle", "seed": 7})";
    auto a = s.handle("POST", "/v1/layout/sample", req);
    auto b = s.handle("POST", "/v1/layout/sample", req);
    REQUIRE(a.status == 200);
    CHECK(a.body == b.body);
    auto j = body_of(a);
    CHECK(j.at("seed") == 7);
    CHECK_NOTHROW(parse_layout(j.at("layout")));

    auto missing = s.handle("POST", "/v1/layout/sample", R"({"text": "a red circle"})");
    CHECK(missing.status == 422);
    CHECK(body_of(missing).at("field_path") == "seed");
    auto negative = s.handle("POST", "/v1/layout/sample", R"({"text": "a", "seed": -1})");
    CHECK(negative.status == 422);
    auto empty = s.handle("POST", "/v1/layout/sample", R"({"text": "  ", "seed": 1})");
    CHECK(empty.status == 422);
    CHECK(body_of(empty).at("field_path") == "text");
    CHECK(s.handle("POST", "/v1/layout/sample", "not json").status == 422);
  }

  TEST_CASE("a supplied layout is echoed verbatim") {
    auto p = toy_pipeline();
    Service s(p, nullptr);
    auto layout = two_box_layout(*p);
    Json req = {{"text", "a red circle"}, {"seed", 3}, {"layout", layout}};
    auto r = s.handle("POST", "/v1/pipeline/generate", req.dump());
    REQUIRE(r.status == 200);
    auto j = body_of(r);
    CHECK(j.at("layout") == layout);
    CHECK(j.at("masks").size() == 2);
    CHECK(j.at("image_sha256").get<std::string>().size() == 64);
    CHECK(j.at("model_version") == p->model_version());

    auto render = s.handle("POST", "/v1/image/render", Json{{"seed", 3}, {"layout", layout}}.dump());
    REQUIRE(render.status == 200);
    CHECK(body_of(render).at("layout") == layout);
    CHECK(s.handle("POST", "/v1/image/render", R"({"seed": 3, "text": "a"})").status == 422);
  }

  TEST_CASE("the same request gives the same image digest") {
    Service s(toy_pipeline(), nullptr);
    const std::string req = R"({"text": "two blue squares on the left", "seed": 11})";
    auto a = body_of(s.handle("POST", "/v1/pipeline/generate", req));
    auto b = body_of(s.handle("POST", "/v1/pipeline/generate", req));
    CHECK(a.at("image_sha256") == b.at("image_sha256"));
    CHECK(a.at("layout") == b.at("layout"));
    CHECK(a.at("masks") == b.at("masks"));
    auto other = body_of(s.handle("POST", "/v1/pipeline/generate", R"({"text": "two blue squares on the left", "seed": 12})"));
    CHECK(other.at("image_sha256") != a.at("image_sha256"));
  }

  TEST_CASE("an invalid label is rejected with its field path") {
    auto p = toy_pipeline();
    Service s(p, nullptr);
    auto layout = two_box_layout(*p);
    layout["boxes"][1]["label"] = 99;
    auto r = s.handle("POST", "/v1/pipeline/generate", Json{{"seed", 1}, {"layout", layout}}.dump());
    CHECK(r.status == 422);
    auto j = body_of(r);
    CHECK(j.at("field_path") == "layout.boxes[1].label");
    CHECK(j.at("code") == "invalid_label");

    auto bad_box = two_box_layout(*p);
    bad_box["boxes"][0]["w"] = 2.0;
    auto r2 = s.handle("POST", "/v1/pipeline/generate", Json{{"seed", 1}, {"layout", bad_box}}.dump());
    CHECK(r2.status == 422);
    CHECK(body_of(r2).at("field_path").get<std::string>().rfind("layout.boxes[0]", 0) == 0);

    auto bad_mask = Json{{"seed", 1}, {"layout", two_box_layout(*p)}, {"masks", {{{"height", 4}, {"width", 4}, {"counts", {16}}}}}};
    CHECK(s.handle("POST", "/v1/pipeline/generate", bad_mask.dump()).status == 422);
  }

  TEST_CASE("without a model requests get 503 until a reload succeeds") {
    std::atomic<bool> ready{false};
    Service s([&]() -> std::shared_ptr<const Pipeline> {
      if (!ready) throw Error(ErrorCode::kNotLoaded, "no checkpoint yet");
      return toy_pipeline(2);
    });
    CHECK(s.handle("GET", "/v1/meta", "").status == 503);
    CHECK(s.handle("POST", "/v1/layout/sample", R"({"text": "a", "seed": 1})").status == 503);
    CHECK(s.handle("POST", "/v1/admin/reload", "").status == 503);
    ready = true;
    auto r = s.handle("POST", "/v1/admin/reload", "");
    REQUIRE(r.status == 200);
    CHECK(s.handle("GET", "/v1/meta", "").status == 200);
    CHECK(body_of(r).at("model_version") == s.snapshot()->model_version());
  }

  TEST_CASE("reload swaps the snapshot; held snapshots stay valid") {
    std::uint64_t next = 1;
    Service s([&] { return toy_pipeline(next++); });
    auto before = s.snapshot();
    auto v1 = body_of(s.handle("GET", "/v1/meta", "")).at("model_version");
    REQUIRE(s.handle("POST", "/v1/admin/reload", "").status == 200);
    auto v2 = body_of(s.handle("GET", "/v1/meta", "")).at("model_version");
    CHECK(v1 != v2);
    CHECK(before->model_version() == v1);
    CHECK_NOTHROW(before->sample_layout("a red circle", 1));
  }

  TEST_CASE("requests over HTTP match direct handling") {
    Service s(toy_pipeline(), nullptr);
    const int port = s.start_background("127.0.0.1");
    httplib::Client client("127.0.0.1", port);
    auto meta = client.Get("/v1/meta");
    REQUIRE(meta);
    CHECK(meta->status == 200);
    CHECK(meta->body == s.handle("GET", "/v1/meta", "").body);
    const std::string req = R"({"text": "a red circle", "seed": 5})";
    auto gen = client.Post("/v1/pipeline/generate", req, "application/json");
    REQUIRE(gen);
    CHECK(gen->status == 200);
    CHECK(gen->body == s.handle("POST", "/v1/pipeline/generate", req).body);
    auto missing = client.Get("/v2/anything");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto put = client.Put("/v1/meta", "", "application/json");
    REQUIRE(put);
    CHECK(put->status == 405);
    s.stop();
  }

  TEST_CASE("listen addresses") {
    CHECK(parse_listen_address("0.0.0.0:9000") == std::pair<std::string, int>{"0.0.0.0", 9000});
    CHECK(parse_listen_address(":81") == std::pair<std::string, int>{"127.0.0.1", 81});
    CHECK(parse_listen_address("82") == std::pair<std::string, int>{"127.0.0.1", 82});
    CHECK(parse_listen_address("") == std::pair<std::string, int>{"127.0.0.1", 8080});
    CHECK(testing::error_code([] { parse_listen_address("host:port"); }) == ErrorCode::kInvalidArgument);
    CHECK(testing::error_code([] { parse_listen_address("host:70000"); }) == ErrorCode::kInvalidArgument);
  }
}
