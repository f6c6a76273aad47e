#include "gustwall/api.hpp"

#include <atomic>
#include <thread>

#include "httplib.h"
#include "gustwall/net.hpp"

namespace gustwall::api {

struct ApiServer::Impl {
  service::ControllerService& service;
  std::string host;
  httplib::Server server;
  std::thread thread;
  std::atomic<bool> stopping{false};

  Impl(service::ControllerService& s, std::string h) : service(s), host(std::move(h)) {}
};

namespace {

constexpr const char* kJson = "application/json";

std::string error_body(const std::string& message) {
  std::string escaped;
  for (char c : message) {
    if (c == '"' || c == '\\') escaped += '\\';
    if (static_cast<unsigned char>(c) < 0x20) continue;
    escaped += c;
  }
  return "{\"error\":\"" + escaped + "\"}";
}

}  // namespace

ApiServer::ApiServer(service::ControllerService& service, std::string host, int port)
    : impl_(std::make_unique<Impl>(service, std::move(host))), port_(port) {
  auto& svr = impl_->server;
  Impl* impl = impl_.get();

  svr.Get("/state", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl->service.state_json(), kJson);
  });

  svr.Post("/profile", [impl](const httplib::Request& req, httplib::Response& res) {
    const auto outcome = impl->service.request_start(req.body);
    res.status = outcome.http_status;
    if (outcome.http_status == 200) {
      res.set_content(impl->service.state_json(), kJson);
    } else {
      res.set_content(error_body(outcome.message), kJson);
    }
  });

  svr.Post("/abort", [impl](const httplib::Request&, httplib::Response& res) {
    const bool was_running = impl->service.request_abort();
    res.set_content(std::string("{\"aborted\":") + (was_running ? "true" : "false") + "}", kJson);
  });

  svr.Get("/telemetry", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [impl, last = std::uint64_t{0}](
                                                              std::size_t, httplib::DataSink& sink) mutable {
      // Decimate to at most 10 events per second.
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (impl->stopping.load()) {
        sink.done();
        return false;
      }
      const auto [seq, rec] = impl->service.latest_record();
      if (rec && seq != last) {
        last = seq;
        const std::string event = "data: " + service::record_json(*rec) + "\n\n";
        if (!sink.write(event.data(), event.size())) return false;
      } else {
        static const std::string keepalive = ": keepalive\n\n";
        if (!sink.write(keepalive.data(), keepalive.size())) return false;
      }
      return true;
    });
  });
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::start() {
  auto& svr = impl_->server;
  if (port_ == 0) {
    port_ = svr.bind_to_any_port(impl_->host);
  } else if (!svr.bind_to_port(impl_->host, port_)) {
    port_ = -1;
  }
  if (port_ < 0) throw net::NetError("cannot bind operator API on " + impl_->host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->stopping = true;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace gustwall::api
