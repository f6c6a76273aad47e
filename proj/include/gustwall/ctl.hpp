#pragma once

// Wind programs, per-tick duty commands with optional tachometer-feedback
// regulation, telemetry bookkeeping and session recording.

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gustwall/calib.hpp"
#include "gustwall/error.hpp"
#include "gustwall/proto.hpp"

namespace gustwall::ctl {

using proto::kFans;
using proto::kFansPerModule;
using proto::kModules;

using FanArray = std::array<double, kFans>;
using FanMask = std::bitset<kFans>;

enum class ErrorCode { InvalidProfile, RangeError, EndpointUnreachable, AbortRequested, Busy };

class ControlError : public Error {
 public:
  ControlError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Profiles and schedules

enum class ProfileKind { Steady, Square, Sine, Piecewise };
enum class Unit { Speed, Duty };

std::string_view to_string(ProfileKind kind);
std::string_view to_string(Unit unit);

struct ProfileStep {
  double duration_s = 0.0;
  double target = 0.0;
};

struct GustProfile {
  ProfileKind kind = ProfileKind::Steady;
  Unit unit = Unit::Speed;
  double lo = 0.0;
  double hi = 0.0;
  double frequency_hz = 0.0;
  std::vector<ProfileStep> steps;
  double duration_s = 0.0;  // 0 = unspecified (piecewise defaults to the step sum)
  std::vector<int> mask;    // global fan indices; empty = all 135

  void validate() const;
  double effective_duration() const;
};

// JSON matching GustProfile; see docs/profiles.md. Throws InvalidProfile.
GustProfile parse_profile(std::string_view json_text);
GustProfile load_profile(const std::filesystem::path& path);
std::string profile_to_json(const GustProfile& profile);

struct ScheduleSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  double target = 0.0;  // in the profile's unit
  double duty = 0.0;
};

// Compiled profile: time -> duty for every fan. Duties outside the mask are 0.
class Schedule {
 public:
  double duration() const noexcept { return duration_; }
  ProfileKind kind() const noexcept { return profile_.kind; }
  const GustProfile& profile() const noexcept { return profile_; }
  const FanMask& mask() const noexcept { return mask_; }

  // Duty applied to masked fans at time t.
  double level_at(double t) const;
  FanArray duties_at(double t) const;
  // Oscillation phase in radians for periodic kinds, 0 otherwise.
  double phase_at(double t) const;
  const std::vector<ScheduleSegment>& segments() const noexcept { return segments_; }

 private:
  friend Schedule compile_profile(const GustProfile&, const calib::Calibration&);

  GustProfile profile_;
  calib::Calibration calib_ = calib::default_calibration();
  FanMask mask_;
  double duration_ = 0.0;
  double lo_duty_ = 0.0;
  double hi_duty_ = 0.0;
  std::vector<ScheduleSegment> segments_;
};

// Throws RangeError if a speed target lies outside the calibration range.
Schedule compile_profile(const GustProfile& profile, const calib::Calibration& calib);

// ---------------------------------------------------------------------------
// Telemetry

struct ModuleTelemetry {
  std::array<double, kFansPerModule> rpm{};
  std::optional<std::int64_t> last_rx_us;
  std::uint32_t last_seq = 0;
  std::uint64_t received = 0;
  std::uint64_t lost = 0;
  std::uint64_t reordered = 0;
};

struct TelemetrySnapshot {
  std::array<ModuleTelemetry, kModules> modules{};
  std::uint64_t malformed = 0;
  std::bitset<kModules> ponged;

  std::uint64_t lost_total() const;
  // Modules with no report newer than max_age_us at now_us.
  std::bitset<kModules> stale(std::int64_t now_us, std::int64_t max_age_us) const;
};

// Latest-state store fed by receivers; internally synchronized.
class TelemetryStore {
 public:
  void ingest(std::span<const std::uint8_t> datagram, std::int64_t rx_us);
  TelemetrySnapshot snapshot() const;
  void clear_pongs();

 private:
  mutable std::mutex mu_;
  TelemetrySnapshot state_;
};

// ---------------------------------------------------------------------------
// Regulation

struct PiGains {
  double kp = 2e-4;  // duty / RPM
  double ki = 1e-3;  // duty / (RPM s)
};

struct PiState {
  PiGains gains;
  double integral = 0.0;  // RPM s; |ki * integral| <= 1
  bool saturated = false;

  // One PI update around a feedforward duty; returns the clamped duty.
  double update(double feedforward, double error_rpm, double dt);
  void reset() {
    integral = 0.0;
    saturated = false;
  }
};

enum class SyncKind { Start, Edge, Stop };
std::string_view to_string(SyncKind kind);

// Commanded wind-program PWM change; mirrors the blinking sync markers.
struct SyncEvent {
  std::int64_t timestamp_us = 0;
  double old_duty = 0.0;
  double new_duty = 0.0;
  double phase = 0.0;  // radians
  SyncKind kind = SyncKind::Edge;
};

struct TickResult {
  FanArray duty{};
  FanArray target_rpm{};
  std::bitset<kModules> stale;
  double level = 0.0;
  std::optional<SyncEvent> sync;
};

class Regulator {
 public:
  Regulator(const calib::Calibration& calib, PiGains gains, bool closed_loop, double command_period_s,
            double telemetry_period_s);

  // Open loop: duty = schedule(t). Closed loop: feedforward plus per-fan PI on
  // the tachometer error; modules with stale telemetry fall back to
  // feedforward. A SyncEvent is produced when the program duty changes
  // (the idle state before the first tick counts as duty 0).
  TickResult tick(const Schedule& schedule, double t, const TelemetrySnapshot& telemetry,
                  std::int64_t now_us);

  bool closed_loop() const noexcept { return closed_loop_; }
  const std::array<PiState, kFans>& pi_states() const noexcept { return pi_; }
  double previous_level() const noexcept { return previous_level_; }

 private:
  calib::CalibrationCurve duty_rpm_;
  bool closed_loop_;
  double dt_;
  std::int64_t stale_after_us_;
  std::array<PiState, kFans> pi_;
  double previous_level_ = 0.0;
  bool first_tick_ = true;
};

// ---------------------------------------------------------------------------
// Sessions

class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void send(int module_index, const proto::Bytes& datagram) = 0;
};

struct SessionOptions {
  double duration_s = 0.0;  // 0 = profile's own duration
  double command_rate_hz = 20.0;
  double telemetry_rate_hz = 20.0;
  bool closed_loop = false;
  PiGains gains;
  std::uint64_t seed = 0;  // recorded in the manifest
};

struct TelemetryRecord {
  std::int64_t timestamp_us = 0;
  double phase = 0.0;
  bool sync = false;
  FanArray duty{};
  FanArray target_rpm{};
  FanArray measured_rpm{};
  std::uint64_t lost_frames = 0;
  int stale_modules = 0;
};

enum class SessionStatus { Pending, Running, Completed, Aborted, Failed, Degraded };
std::string_view to_string(SessionStatus status);

struct SessionResult {
  SessionStatus status = SessionStatus::Pending;
  std::vector<TelemetryRecord> records;
  std::vector<SyncEvent> events;
  std::bitset<kModules> silent_modules;
  std::uint64_t lost_frames = 0;
  std::uint64_t malformed = 0;
  std::string message;
};

// Drives one wind program through a frame sink. Every exit path leaves the
// wall commanded to zero: stop() does it explicitly and the destructor does
// it if stop() was never reached.
class Session {
 public:
  Session(Schedule schedule, const calib::Calibration& calib, SessionOptions options, FrameSink& sink);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  std::int64_t tick_count() const noexcept { return ticks_; }
  std::int64_t next_tick() const noexcept { return next_; }
  // Session-relative time of tick k in microseconds.
  std::int64_t tick_time_us(std::int64_t k) const;
  bool finished() const noexcept { return stopped_; }
  bool done_ticking() const noexcept { return next_ >= ticks_; }

  // Runs the next tick at session-relative time now_us.
  const TelemetryRecord& step(const TelemetrySnapshot& telemetry, std::int64_t now_us);

  // Commands duty 0 everywhere, records the stop event and a final row.
  void stop(SessionStatus status, const TelemetrySnapshot& telemetry, std::int64_t now_us,
            std::string message = {});

  const Schedule& schedule() const noexcept { return schedule_; }
  const SessionOptions& options() const noexcept { return options_; }
  const SessionResult& result() const noexcept { return result_; }
  SessionResult take_result() { return std::move(result_); }
  const TelemetryRecord* last_record() const {
    return result_.records.empty() ? nullptr : &result_.records.back();
  }

 private:
  void send_duties(const FanArray& duty, std::int64_t now_us);

  Schedule schedule_;
  SessionOptions options_;
  FrameSink& sink_;
  Regulator regulator_;
  std::int64_t ticks_;
  std::int64_t next_ = 0;
  std::array<std::uint32_t, kModules> seq_{};
  bool stopped_ = false;
  SessionResult result_;
};

// Sends SET_PWM all-zero to every module (twice; commands are idempotent).
void zero_wall(FrameSink& sink, std::array<std::uint32_t, kModules>& seq, std::int64_t now_us);

// ---------------------------------------------------------------------------
// Run directories: manifest.json, telemetry.csv, events.csv

struct RunInfo {
  std::string subcommand = "run";
  std::string calib_hash;
  std::string started_utc;
  std::string finished_utc;
  std::vector<std::string> inputs;
  std::string extra_json = "{}";  // merged into the manifest
};

std::string telemetry_csv(const std::vector<TelemetryRecord>& records);
std::string events_csv(const std::vector<SyncEvent>& events);
std::vector<SyncEvent> parse_events_csv(std::string_view text);

// Creates <parent>/<UTC stamp>-<8 hex> and writes the three files; the
// manifest is written last and atomically.
std::filesystem::path write_run_directory(const std::filesystem::path& parent, const Schedule& schedule,
                                          const SessionOptions& options, const SessionResult& result,
                                          const RunInfo& info);

std::string config_hash(const Schedule& schedule, const SessionOptions& options);

}  // namespace gustwall::ctl
