#pragma once

// Emulated fan wall: per-fan first-order spin dynamics, tachometer, module
// endpoints speaking the wire protocol, and a synthetic plume sampled by
// virtual sensors on the 1 m test plane.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gustwall/calib.hpp"
#include "gustwall/error.hpp"
#include "gustwall/proto.hpp"

namespace gustwall::emu {

inline constexpr double kMaxRpm = 3600.0;

class EmuError : public Error {
 public:
  enum class Code { OutOfBounds, BadConfig };
  EmuError(Code code, const std::string& detail);
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

struct FanState {
  double rpm = 0.0;
  double duty = 0.0;
  double tau = 0.3;  // seconds
};

// Exact first-order response over dt towards gain * duty_rpm(duty), clamped
// to [0, 3600] RPM.
FanState step_fan(const FanState& state, double commanded_duty, double dt,
                  const calib::CalibrationCurve& duty_rpm, double gain = 1.0);

// round(rpm) with uniform {-1, 0, +1} count jitter; a stopped fan reads 0.
int tach_read(const FanState& state, std::mt19937_64& rng);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct ArrayGeometry {
  double width = 1.2;
  double height = 0.75;
  double fan_pitch = 0.08;  // nominal; fan cells tile width x height exactly
  int module_columns = 5;
  int module_rows = 3;
  int fans_per_side = 3;

  int fan_columns() const { return module_columns * fans_per_side; }
  int fan_rows() const { return module_rows * fans_per_side; }
  double area() const { return width * height; }
  bool contains(Point p) const;
  // Center of a fan by global index (module-major, row-major inside a module).
  Point fan_center(int global_index) const;
  Point center() const { return {width / 2.0, height / 2.0}; }
};

struct PlumeModel {
  double kernel_sigma_m = 0.12;
  double taper_m = 0.15;
  double ti_core = 0.03;
  double ti_boundary = 0.22;
  // TI blends from core to boundary between these normalized radii, where
  // radius = max(|dx| / half-width, |dy| / half-height) from the array center.
  double ti_core_radius = 0.45;
  double ti_edge_radius = 0.75;
  double noise_cutoff_hz = 20.0;
  double transport_delay_s = 0.0;  // 0 selects distance / centerline speed
  double delay_floor_s = 0.25;
  double delay_max_s = 2.0;
  double plane_distance_m = 1.0;

  void validate() const;
};

// Stateless spatial part of the plume.
class PlumeField {
 public:
  PlumeField(ArrayGeometry geometry, PlumeModel model, calib::Calibration calibration);

  const ArrayGeometry& geometry() const noexcept { return geometry_; }
  const PlumeModel& model() const noexcept { return model_; }
  const calib::Calibration& calibration() const noexcept { return calib_; }

  // Gain field in [0, 1]: 1 in the core, raised-cosine taper over the outer band.
  double envelope(Point p) const;
  double ti_at(Point p) const;
  // Normalized Gaussian kernel weights over the 135 fans.
  std::vector<double> kernel_weights(Point p) const;
  double centerline_speed(std::span<const double> fan_rpm) const;
  double transport_delay(double centerline_speed_mps) const;

 private:
  void require_inside(Point p) const;

  ArrayGeometry geometry_;
  PlumeModel model_;
  calib::Calibration calib_;
};

// A probe at a fixed point. Must be sampled at a uniform rate; keeps the
// advection history and the band-limited turbulence state.
class VirtualSensor {
 public:
  VirtualSensor(const PlumeField& field, Point position, double sample_rate_hz, std::uint64_t seed);

  // Wind speed in m/s at time t given the current fan RPMs.
  double sample(std::span<const double> fan_rpm, double t);
  // Noise-free value for the given RPMs (no delay).
  double steady_speed(std::span<const double> fan_rpm) const;

  Point position() const noexcept { return position_; }
  double ti() const noexcept { return ti_; }
  double sample_rate() const noexcept { return rate_; }

 private:
  double unit_noise();
  double local_rpm(std::span<const double> fan_rpm) const;

  const PlumeField* field_;
  Point position_;
  double rate_;
  double envelope_;
  double ti_;
  std::vector<double> weights_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double pole_ = 0.0;
  double noise_scale_ = 1.0;
  double stage1_ = 0.0;
  double stage2_ = 0.0;
  std::deque<std::pair<double, double>> history_;  // (t, local rpm)
  double last_source_t_ = -1e300;
};

struct EndpointConfig {
  double tau_s = 0.3;
  double telemetry_rate_hz = 20.0;
  double watchdog_s = 2.0;
  // Per-fan steady-state gain drawn uniformly from [1 - spread, 1 + spread].
  double gain_spread = 0.0;
};

struct EndpointCounters {
  std::uint64_t frames_received = 0;
  std::uint64_t malformed = 0;
  std::uint64_t misrouted = 0;
  std::uint64_t set_pwm = 0;
  std::uint64_t pings = 0;
  std::uint64_t telemetry_sent = 0;
  std::uint64_t watchdog_trips = 0;
};

// One 9-fan module. Transport-agnostic: datagrams in, datagrams out, time
// supplied by the caller.
class ModuleEndpoint {
 public:
  ModuleEndpoint(int module_index, EndpointConfig config, calib::CalibrationCurve duty_rpm,
                 std::uint64_t seed);

  int module_index() const noexcept { return module_; }

  // Integrates to now, then processes one datagram. Returns a PONG for PING.
  // Malformed or misrouted frames are counted and dropped.
  std::optional<proto::Bytes> handle(std::span<const std::uint8_t> datagram, std::int64_t now_us);

  // Integrates to now and returns the telemetry frames that came due.
  std::vector<proto::Bytes> advance(std::int64_t now_us);

  std::array<double, proto::kFansPerModule> duties() const;
  std::array<double, proto::kFansPerModule> rpms() const;
  const std::array<FanState, proto::kFansPerModule>& fans() const noexcept { return fans_; }
  const EndpointCounters& counters() const noexcept { return counters_; }
  bool watchdog_tripped() const noexcept { return watchdog_tripped_; }
  std::int64_t now_us() const noexcept { return now_us_; }

 private:
  void integrate_to(std::int64_t t_us);
  void step_all(std::int64_t t_us);
  void emit_report(std::int64_t t_us);

  int module_;
  EndpointConfig config_;
  calib::CalibrationCurve duty_rpm_;
  std::mt19937_64 rng_;
  std::array<FanState, proto::kFansPerModule> fans_{};
  std::array<double, proto::kFansPerModule> commanded_{};
  std::array<double, proto::kFansPerModule> gains_{};
  std::int64_t now_us_ = 0;
  std::int64_t report_period_us_;
  std::int64_t next_report_us_;
  std::optional<std::int64_t> last_command_us_;
  bool watchdog_tripped_ = false;
  std::uint32_t telemetry_seq_ = 0;
  std::vector<proto::Bytes> pending_;
  EndpointCounters counters_;
};

struct EmulatorConfig {
  ArrayGeometry geometry;
  EndpointConfig endpoint;
  PlumeModel plume;
  std::uint64_t seed = 1;
  std::string host = "127.0.0.1";
  int base_port = 47100;
};

// TOML-style key/value file: "key = value" lines, "[section]" headers,
// '#' comments. Unknown keys are rejected. See docs/emulator_config.md.
EmulatorConfig parse_emulator_config(std::string_view text);

// Per-module seed derived from the emulator seed.
std::uint64_t module_seed(std::uint64_t seed, int module_index);

// All 15 endpoints plus plume probes, stepped in lockstep by the caller.
// Frames sent to a module are delivered at the wall's current time on the
// next advance_to().
class SimWall {
 public:
  SimWall(EmulatorConfig config, calib::Calibration calibration);
  SimWall(const SimWall&) = delete;
  SimWall& operator=(const SimWall&) = delete;

  void send(int module_index, proto::Bytes datagram);
  // Delivers queued datagrams, integrates to now, samples probes on their
  // grid, and returns every datagram the endpoints emitted.
  std::vector<proto::Bytes> advance_to(std::int64_t now_us);

  // A killed endpoint stops processing and emitting, as if unplugged.
  void kill(int module_index);
  bool alive(int module_index) const { return alive_.at(module_index); }

  // Probes are sampled at multiples of 1 / sample_rate_hz from time 0.
  int add_probe(Point position, double sample_rate_hz);
  const std::vector<double>& probe_samples(int probe) const { return probes_.at(probe).samples; }
  const VirtualSensor& probe(int probe) const { return probes_.at(probe).sensor; }

  std::array<double, proto::kFans> fan_rpms() const;
  std::array<double, proto::kFans> fan_duties() const;
  const ModuleEndpoint& endpoint(int module_index) const { return endpoints_.at(module_index); }
  const PlumeField& field() const noexcept { return field_; }
  std::int64_t now_us() const noexcept { return now_us_; }

 private:
  struct Probe {
    VirtualSensor sensor;
    std::int64_t index = 0;  // next sample index
    std::vector<double> samples;
  };

  void integrate_endpoints(std::int64_t t_us, std::vector<proto::Bytes>& out);

  EmulatorConfig config_;
  PlumeField field_;
  std::vector<ModuleEndpoint> endpoints_;
  std::array<bool, proto::kModules> alive_{};
  std::vector<std::pair<int, proto::Bytes>> inbox_;
  std::vector<Probe> probes_;
  std::int64_t now_us_ = 0;
};

}  // namespace gustwall::emu
