#pragma once

// Runs a controller session against the in-process emulated wall on a
// simulated clock. Same Session logic as the UDP runner, no sockets.

#include <functional>
#include <vector>

#include "gustwall/ctl.hpp"
#include "gustwall/emu.hpp"
#include "gustwall/flowlab.hpp"

namespace gustwall::sim {

struct KillAt {
  int module = 0;
  std::int64_t time_us = 0;
};

struct ProbeSpec {
  emu::Point position;
  double sample_rate_hz = 1000.0;
};

struct SimRunOptions {
  ctl::SessionOptions session;
  emu::EmulatorConfig emulator;
  std::vector<KillAt> kills;
  std::vector<ProbeSpec> probes;
};

struct SimRunResult {
  ctl::SessionResult session;
  std::vector<std::vector<double>> probe_samples;
  std::array<double, proto::kFans> final_duties{};
  std::array<double, proto::kFans> final_rpms{};
};

// Called after every tick; return false to abort the session.
using TickHook = std::function<bool(const ctl::TelemetryRecord&, const emu::SimWall&)>;

SimRunResult run_session_sim(const ctl::Schedule& schedule, const calib::Calibration& calib,
                             const SimRunOptions& options, const TickHook& hook = {});

// Synthetic sensing-grid capture: the wall idles for the quiescent window,
// is driven at a uniform duty, and the 15 grid probes are logged with a
// per-sensor constant offset added.
struct GridLogOptions {
  emu::EmulatorConfig emulator;
  double duty = 1.0;
  double sample_rate_hz = 3000.0;
  double quiescent_s = 1.0;
  double settle_s = 3.0;
  double capture_s = 20.0;
  double offset_max = 0.4;  // offsets drawn uniformly from [-max, max]
};

flowlab::SensorLog synthesize_grid_log(const calib::Calibration& calib, const GridLogOptions& options);

// Noise-free expected mean for each grid sensor at a uniform duty.
std::map<int, double> expected_grid_means(const calib::Calibration& calib, const emu::EmulatorConfig& config,
                                          double duty);

}  // namespace gustwall::sim
