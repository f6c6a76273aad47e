#pragma once

// UDP transport: sockets, the controller-side link to the 15 endpoints, the
// emulator's endpoint server, and the real-time session runner.

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gustwall/ctl.hpp"
#include "gustwall/emu.hpp"

namespace gustwall::net {

// Bind failures, unreachable hosts and similar. Category Network.
class NetError : public Error {
 public:
  explicit NetError(const std::string& what) : Error(Category::Network, what) {}
};

struct Address {
  std::string host = "127.0.0.1";
  int port = 0;
};

class UdpSocket {
 public:
  // Binds host:port; port 0 picks an ephemeral port.
  UdpSocket(const std::string& host, int port);
  ~UdpSocket();
  UdpSocket(UdpSocket&& other) noexcept;
  UdpSocket& operator=(UdpSocket&& other) noexcept;
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  int fd() const noexcept { return fd_; }
  int local_port() const;
  void send_to(const Address& to, std::span<const std::uint8_t> data) const;
  // Waits up to timeout_ms for one datagram; nullopt on timeout.
  std::optional<proto::Bytes> receive(int timeout_ms, Address* from = nullptr) const;

 private:
  int fd_ = -1;
};

// Where each module listens. Default: host:base_port + module index.
struct EndpointTable {
  std::array<Address, proto::kModules> modules;

  static EndpointTable local(int base_port, const std::string& host = "127.0.0.1");
};

// {"host": "...", "base_port": N} or {"modules": [{"module": m, "host": h, "port": p}, ...]}
EndpointTable parse_endpoint_table(std::string_view json_text);
EndpointTable load_endpoint_table(const std::filesystem::path& path);
std::string endpoint_table_json(const EndpointTable& table);

// GUSTWALL_BASE_PORT if set, otherwise 47100.
int default_base_port();

using Clock = std::chrono::steady_clock;

// Controller side: one socket, one receiver thread feeding a TelemetryStore.
class UdpLink : public ctl::FrameSink {
 public:
  UdpLink(EndpointTable table, ctl::TelemetryStore& store);
  ~UdpLink() override;

  void send(int module_index, const proto::Bytes& datagram) override;

  // Receive timestamps are microseconds since this origin.
  void set_origin(Clock::time_point origin) { origin_ns_.store(origin.time_since_epoch().count()); }
  std::int64_t now_us() const;
  std::uint64_t send_errors() const noexcept { return send_errors_.load(); }

 private:
  void receive_loop();

  EndpointTable table_;
  ctl::TelemetryStore& store_;
  UdpSocket socket_;
  std::atomic<Clock::rep> origin_ns_;
  std::atomic<bool> running_{true};
  std::atomic<std::uint64_t> send_errors_{0};
  std::thread receiver_;
};

// PINGs every module until all answer or the timeout expires. Returns the
// modules that stayed silent.
std::bitset<proto::kModules> ping_all(UdpLink& link, ctl::TelemetryStore& store,
                                      std::chrono::milliseconds timeout);

struct UdpRunOptions {
  ctl::SessionOptions session;
  std::chrono::milliseconds ping_timeout{1000};
};

// Real-time session over UDP. Throws EndpointUnreachable (after zeroing the
// wall) when modules do not answer PING. A module going silent mid-run ends
// the session as Degraded. Setting abort stops it as Aborted.
ctl::SessionResult run_session_udp(const ctl::Schedule& schedule, const calib::Calibration& calib,
                                   const EndpointTable& endpoints, const UdpRunOptions& options,
                                   const std::atomic<bool>* abort = nullptr,
                                   const std::function<void(const ctl::TelemetryRecord&)>& on_tick = {});

// Emulator side: a set of ModuleEndpoints, each on its own UDP port, served
// from one thread against the steady clock. Replies go to the sender of the
// most recent frame.
class EndpointServer {
 public:
  EndpointServer(const emu::EmulatorConfig& config, const calib::Calibration& calib, std::vector<int> modules);
  ~EndpointServer();

  void start();
  void stop();
  bool running() const noexcept { return running_.load(); }
  const std::vector<int>& modules() const noexcept { return modules_; }
  int port_of(int module_index) const;
  // Snapshot of the commanded duties per served module.
  std::vector<std::pair<int, std::array<double, proto::kFansPerModule>>> duties() const;

 private:
  void serve();

  struct Slot {
    int module;
    UdpSocket socket;
    emu::ModuleEndpoint endpoint;
    std::optional<Address> peer;
  };

  std::vector<int> modules_;
  std::vector<std::unique_ptr<Slot>> slots_;
  mutable std::mutex mu_;
  std::atomic<bool> running_{false};
  std::thread thread_;
  Clock::time_point origin_;
};

}  // namespace gustwall::net
