#pragma once

#include <map>
#include <memory>
#include <string>

#include "loadcast/engine.hpp"

namespace loadcast {

inline constexpr const char* kApiVersion = "1";

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON envelope
};

/// JSON API over an Engine. Responses are envelopes
/// {"api_version", "status", "data" | "error"} with a fixed key order, so
/// identical state yields identical bytes. Training and cycles run as
/// background jobs, one at a time.
class Service {
 public:
  explicit Service(Engine& engine);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one request. `params` are decoded query parameters.
  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& params = {}, const std::string& body = {},
                      const std::string& idempotency_key = {});

  /// Listens in a background thread and returns the bound port (0 picks one).
  int start(const std::string& host, int port);
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();
  /// Blocks until no job is queued or running.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace loadcast
