#pragma once

// Controller service behind the operator API. One scheduler (whoever calls
// advance(), normally run_realtime) owns the session; API handlers only post
// control messages and read the published state, so any number of readers
// may call in concurrently.

#include <atomic>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gustwall/ctl.hpp"
#include "gustwall/emu.hpp"
#include "gustwall/net.hpp"

namespace gustwall::service {

class WallBackend {
 public:
  virtual ~WallBackend() = default;
  virtual ctl::FrameSink& sink() = 0;
  // Brings the backend up to now_us on the service clock and collects telemetry.
  virtual void poll(std::int64_t now_us) = 0;
  virtual ctl::TelemetrySnapshot snapshot() const = 0;
};

// In-process emulated wall driven by the service clock.
class SimBackend : public WallBackend {
 public:
  SimBackend(const emu::EmulatorConfig& config, const calib::Calibration& calib);
  ctl::FrameSink& sink() override { return sink_; }
  void poll(std::int64_t now_us) override;
  ctl::TelemetrySnapshot snapshot() const override { return store_.snapshot(); }
  const emu::SimWall& wall() const { return wall_; }

 private:
  struct Sink : ctl::FrameSink {
    emu::SimWall* wall = nullptr;
    void send(int module_index, const proto::Bytes& datagram) override { wall->send(module_index, datagram); }
  };
  emu::SimWall wall_;
  Sink sink_;
  ctl::TelemetryStore store_;
};

// Real endpoints over UDP. The service clock must be the link clock.
class UdpBackend : public WallBackend {
 public:
  explicit UdpBackend(const net::EndpointTable& endpoints);
  ctl::FrameSink& sink() override { return link_; }
  void poll(std::int64_t) override {}
  ctl::TelemetrySnapshot snapshot() const override { return store_.snapshot(); }
  net::UdpLink& link() { return link_; }

 private:
  ctl::TelemetryStore store_;
  net::UdpLink link_;
};

struct ServiceOptions {
  double command_rate_hz = 20.0;
  double telemetry_rate_hz = 20.0;
  bool closed_loop = false;
  ctl::PiGains gains;
  // Periodic profiles without a duration run until aborted or this long.
  double max_duration_s = 3600.0;
  std::optional<std::filesystem::path> out_dir;  // run directories go here
  std::uint64_t seed = 0;
};

struct StartOutcome {
  int http_status = 200;  // 200 started, 400 invalid, 409 busy
  std::string message;
};

struct FanView {
  double duty = 0.0;
  double target_rpm = 0.0;
  double rpm = 0.0;
};

struct ServiceState {
  std::string status = "idle";  // idle, running, completed, aborted, degraded, failed
  std::optional<ctl::GustProfile> profile;
  double t_s = 0.0;
  double phase = 0.0;
  double duration_s = 0.0;
  std::int64_t tick = 0;
  std::uint64_t events = 0;
  std::array<FanView, proto::kFans> fans{};
  std::bitset<proto::kModules> stale;
  std::array<std::uint64_t, proto::kModules> lost{};
  std::uint64_t malformed = 0;
  std::string message;
  std::string last_run_dir;
};

class ControllerService {
 public:
  ControllerService(calib::Calibration calib, std::unique_ptr<WallBackend> backend, ServiceOptions options);
  ~ControllerService();

  // API side.
  StartOutcome request_start(std::string_view profile_json);
  bool request_abort();
  ServiceState state() const;
  std::string state_json() const;
  // Latest telemetry record and its sequence number (0 before the first tick).
  std::pair<std::uint64_t, std::optional<ctl::TelemetryRecord>> latest_record() const;

  // Scheduler side: process control messages and run every tick due by now_us.
  void advance(std::int64_t now_us);
  // Runs advance() against the steady clock until stop is set.
  void run_realtime(const std::atomic<bool>& stop);

  WallBackend& backend() { return *backend_; }
  bool busy() const;

 private:
  struct Command {
    enum class Kind { Start, Abort } kind;
    std::optional<ctl::Schedule> schedule;
  };

  void finish(ctl::SessionStatus status, std::int64_t now_us, const std::string& message);
  void publish(std::int64_t now_us);

  calib::Calibration calib_;
  std::unique_ptr<WallBackend> backend_;
  ServiceOptions options_;

  mutable std::mutex queue_mu_;
  std::deque<Command> queue_;
  bool busy_ = false;  // guarded by queue_mu_

  std::mutex sched_mu_;
  std::unique_ptr<ctl::Session> session_;
  std::int64_t session_start_us_ = 0;
  std::string started_utc_;

  mutable std::mutex state_mu_;
  ServiceState state_;
  std::uint64_t record_seq_ = 0;
  std::optional<ctl::TelemetryRecord> latest_;
};

std::string record_json(const ctl::TelemetryRecord& record);

}  // namespace gustwall::service
