#pragma once

// HTTP service over an immutable pipeline snapshot. Request handling is a
// pure function of (method, path, body, snapshot); only the admin reload
// endpoint swaps the snapshot.

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "hiergen/pipeline.hpp"

namespace httplib {
class Server;
}

namespace hiergen {

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class Service {
 public:
  using Loader = std::function<std::shared_ptr<const Pipeline>()>;

  // `loader` is called for the initial snapshot (a failure leaves the service
  // without a model: 503) and again on POST /v1/admin/reload.
  explicit Service(Loader loader);
  Service(std::shared_ptr<const Pipeline> snapshot, Loader loader);
  ~Service();

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);
  HttpResponse reload();
  std::shared_ptr<const Pipeline> snapshot() const;

  // Blocks until stop() is called. Returns false when the address cannot be bound.
  bool listen(const std::string& host, int port);
  // Binds to an ephemeral port and serves on a background thread; returns the port.
  int start_background(const std::string& host);
  void stop();

 private:
  void install_routes();

  Loader loader_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Pipeline> snapshot_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<std::thread> thread_;
};

// "host:port" (or ":port" / "port") -> parts; defaults 127.0.0.1:8080.
std::pair<std::string, int> parse_listen_address(const std::string& address);

}  // namespace hiergen
