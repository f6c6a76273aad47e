#pragma once

// HTTP/JSON operator API over a ControllerService:
//   GET  /state      full wall state
//   POST /profile    start a profile (400 invalid, 409 busy)
//   POST /abort      stop the running profile
//   GET  /telemetry  server-sent events, one TelemetryRecord per event, <= 10 Hz

#include <memory>
#include <string>

#include "gustwall/service.hpp"

namespace gustwall::api {

class ApiServer {
 public:
  ApiServer(service::ControllerService& service, std::string host, int port);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds (port 0 picks a free one) and serves on a background thread.
  void start();
  void stop();
  int port() const noexcept { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_;
};

}  // namespace gustwall::api
