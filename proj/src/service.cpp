#include "hiergen/service.hpp"

#include <thread>

#include "httplib.h"

#include "hiergen/digest.hpp"
#include "hiergen/error.hpp"
#include "hiergen/json_io.hpp"
#include "hiergen/log.hpp"

namespace hiergen {

namespace {

HttpResponse json_response(int status, const Json& body) { return {status, body.dump(), "application/json"}; }

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const std::string& field_path = {}) {
  Json body;
  body["code"] = code;
  body["message"] = message;
  if (!field_path.empty()) body["field_path"] = field_path;
  return json_response(status, body);
}

HttpResponse error_response(const Error& e) {
  const int status = e.code() == ErrorCode::kNotLoaded ? 503 : (e.code() == ErrorCode::kIo ? 500 : 422);
  return error_response(status, error_code_name(e.code()), e.what(), e.field_path());
}

Json parse_body(const std::string& body) {
  try {
    auto j = Json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::kParse, "request body must be a JSON object");
    return j;
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("request body is not JSON: ") + e.what());
  }
}

std::uint64_t require_seed(const Json& req) {
  auto it = req.find("seed");
  if (it == req.end()) throw Error(ErrorCode::kInvalidArgument, "seed is required", "seed");
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() && it->get<long long>() < 0)) {
    throw Error(ErrorCode::kInvalidArgument, "seed must be a non-negative integer", "seed");
  }
  return it->get<std::uint64_t>();
}

std::string optional_text(const Json& req) {
  auto it = req.find("text");
  if (it == req.end() || it->is_null()) return {};
  if (!it->is_string()) throw Error(ErrorCode::kInvalidArgument, "text must be a string", "text");
  return it->get<std::string>();
}

std::string require_text(const Json& req) {
  auto text = optional_text(req);
  if (tokenize(text).empty()) throw Error(ErrorCode::kInvalidArgument, "text must contain at least one word", "text");
  return text;
}

Json meta_json(const Pipeline& p) {
  Json j;
  j["classes"] = p.class_names();
  j["grid"] = p.grid();
  j["model_version"] = p.model_version();
  return j;
}

Json masks_json(const std::vector<InstanceMask>& masks, double threshold) {
  Json out = Json::array();
  for (const auto& m : masks) out.push_back(rle_json(rle_encode(m, threshold)));
  return out;
}

PipelineRequest parse_generate(const Json& req, const Pipeline& p, bool layout_required) {
  PipelineRequest r;
  r.seed = require_seed(req);
  r.text = optional_text(req);
  auto layout = req.find("layout");
  if (layout != req.end() && !layout->is_null()) {
    r.layout = parse_layout(*layout, "layout");
  } else if (layout_required) {
    throw Error(ErrorCode::kInvalidArgument, "layout is required", "layout");
  } else if (tokenize(r.text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "text must contain at least one word unless a layout is given", "text");
  }
  auto masks = req.find("masks");
  if (masks != req.end() && !masks->is_null()) {
    if (!masks->is_array()) throw Error(ErrorCode::kInvalidArgument, "masks must be an array", "masks");
    std::vector<InstanceMask> decoded;
    for (std::size_t t = 0; t < masks->size(); ++t) {
      const auto path = "masks[" + std::to_string(t) + "]";
      auto rle = parse_rle((*masks)[t], path);
      if (rle.height != p.grid() || rle.width != p.grid()) {
        throw Error(ErrorCode::kShapeMismatch, "mask grid must match the model grid", path);
      }
      decoded.push_back(rle_decode(rle));
    }
    r.masks = std::move(decoded);
  }
  return r;
}

}  // namespace

Service::Service(Loader loader) : loader_(std::move(loader)) {
  try {
    if (loader_) snapshot_ = loader_();
  } catch (const std::exception& e) {
    log::warn("service starts without a model: ", e.what());
  }
}

Service::Service(std::shared_ptr<const Pipeline> snapshot, Loader loader)
    : loader_(std::move(loader)), snapshot_(std::move(snapshot)) {}

Service::~Service() { stop(); }

std::shared_ptr<const Pipeline> Service::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

HttpResponse Service::reload() {
  if (!loader_) return error_response(503, error_code_name(ErrorCode::kNotLoaded), "no checkpoint source configured");
  std::shared_ptr<const Pipeline> next;
  try {
    next = loader_();
  } catch (const Error& e) {
    return error_response(503, error_code_name(e.code()), std::string("reload failed: ") + e.what(), e.field_path());
  } catch (const std::exception& e) {
    return error_response(503, error_code_name(ErrorCode::kNotLoaded), std::string("reload failed: ") + e.what());
  }
  {
    std::lock_guard lock(mutex_);
    snapshot_ = next;
  }
  return json_response(200, meta_json(*next));
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  const bool get = method == "GET";
  const bool post = method == "POST";
  const bool known = path == "/v1/meta" || path == "/v1/layout/sample" || path == "/v1/pipeline/generate" ||
                     path == "/v1/image/render" || path == "/v1/admin/reload";
  if (!known) return error_response(404, "not_found", "unknown endpoint " + path);
  if ((path == "/v1/meta") != get || (path != "/v1/meta" && !post)) {
    return error_response(405, "method_not_allowed", method + " is not supported on " + path);
  }
  if (path == "/v1/admin/reload") return reload();
  const auto p = snapshot();
  if (!p) return error_response(503, error_code_name(ErrorCode::kNotLoaded), "no model is loaded");
  try {
    if (path == "/v1/meta") return json_response(200, meta_json(*p));
    const Json req = parse_body(body);
    if (path == "/v1/layout/sample") {
      const auto seed = require_seed(req);
      const auto text = require_text(req);
      auto [layout, truncated] = p->sample_layout(text, seed);
      Json out;
      out["layout"] = layout_json(layout);
      out["truncated"] = truncated;
      out["seed"] = seed;
      out["model_version"] = p->model_version();
      return json_response(200, out);
    }
    const bool render_only = path == "/v1/image/render";
    const auto request = parse_generate(req, *p, render_only);
    const auto result = p->generate(request);
    Json out;
    // A supplied layout is echoed as sent.
    out["layout"] = request.layout ? req.at("layout") : layout_json(result.layout);
    out["truncated"] = result.truncated;
    out["masks"] = masks_json(result.masks, p->config().pipeline.mask_threshold);
    const auto png = encode_png(result.image);
    out["image"] = base64_encode(png);
    out["image_sha256"] = sha256_hex(std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
    out["seed"] = request.seed;
    out["model_version"] = p->model_version();
    return json_response(200, out);
  } catch (const Error& e) {
    return error_response(e);
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

void Service::install_routes() {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->Get(R"(/.*)", route);
  server_->Post(R"(/.*)", route);
  server_->Put(R"(/.*)", route);
  server_->Delete(R"(/.*)", route);
  server_->Patch(R"(/.*)", route);
}

bool Service::listen(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  return server_->listen(host, port);
}

int Service::start_background(const std::string& host) {
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  const int port = server_->bind_to_any_port(host);
  if (port < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
  thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_ && thread_->joinable()) thread_->join();
  thread_.reset();
}

std::pair<std::string, int> parse_listen_address(const std::string& address) {
  std::string host = "127.0.0.1";
  std::string port_text = address;
  const auto colon = address.rfind(':');
  if (colon != std::string::npos) {
    if (colon > 0) host = address.substr(0, colon);
    port_text = address.substr(colon + 1);
  }
  if (port_text.empty()) return {host, 8080};
  try {
    std::size_t used = 0;
    const int port = std::stoi(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) throw std::invalid_argument("port");
    return {host, port};
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "invalid listen address '" + address + "'", "addr");
  }
}

}  // namespace hiergen
