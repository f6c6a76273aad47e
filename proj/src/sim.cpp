#include "gustwall/sim.hpp"

#include <random>

namespace gustwall::sim {

namespace {

class WallSink : public ctl::FrameSink {
 public:
  explicit WallSink(emu::SimWall& wall) : wall_(wall) {}
  void send(int module_index, const proto::Bytes& datagram) override { wall_.send(module_index, datagram); }

 private:
  emu::SimWall& wall_;
};

}  // namespace

SimRunResult run_session_sim(const ctl::Schedule& schedule, const calib::Calibration& calib,
                             const SimRunOptions& options, const TickHook& hook) {
  emu::SimWall wall(options.emulator, calib);
  for (const auto& p : options.probes) wall.add_probe(p.position, p.sample_rate_hz);
  WallSink sink(wall);
  ctl::TelemetryStore store;

  auto advance = [&](std::int64_t t_us) {
    for (const auto& k : options.kills) {
      if (k.time_us <= t_us && wall.alive(k.module)) {
        wall.advance_to(k.time_us);
        wall.kill(k.module);
      }
    }
    for (const auto& d : wall.advance_to(t_us)) store.ingest(d, t_us);
  };

  SimRunResult out;
  {
    ctl::Session session(schedule, calib, options.session, sink);
    bool aborted = false;
    while (!session.done_ticking()) {
      const auto t_us = session.tick_time_us(session.next_tick());
      advance(t_us);
      const auto& rec = session.step(store.snapshot(), t_us);
      if (hook && !hook(rec, wall)) {
        aborted = true;
        break;
      }
    }
    const auto t_end = session.tick_time_us(session.next_tick());
    advance(t_end);
    const auto snapshot = store.snapshot();
    auto status = ctl::SessionStatus::Completed;
    std::string message;
    const auto stale_after = std::llround(3e6 / options.session.telemetry_rate_hz);
    const auto silent = snapshot.stale(t_end, stale_after);
    if (aborted) {
      status = ctl::SessionStatus::Aborted;
      message = "aborted by operator";
    } else if (silent.any()) {
      status = ctl::SessionStatus::Degraded;
      message = std::to_string(silent.count()) + " module(s) went silent";
    }
    session.stop(status, snapshot, t_end, message);
    // Let the zero commands land.
    advance(t_end + session.tick_time_us(1));
    out.session = session.take_result();
  }
  for (std::size_t i = 0; i < options.probes.size(); ++i) {
    out.probe_samples.push_back(wall.probe_samples(static_cast<int>(i)));
  }
  out.final_duties = wall.fan_duties();
  out.final_rpms = wall.fan_rpms();
  return out;
}

namespace {

flowlab::GridLayout layout_for(const emu::ArrayGeometry& g) {
  flowlab::GridLayout layout;
  layout.width = g.width;
  layout.height = g.height;
  return layout;
}

}  // namespace

flowlab::SensorLog synthesize_grid_log(const calib::Calibration& calib, const GridLogOptions& options) {
  if (!(options.sample_rate_hz > 0) || !(options.capture_s > 0) || options.quiescent_s < 0 || options.settle_s < 0) {
    throw Error(Error::Category::Usage, "grid log timing must be positive");
  }
  emu::SimWall wall(options.emulator, calib);
  const auto layout = layout_for(options.emulator.geometry);
  for (int id = 1; id <= flowlab::kSensors; ++id) {
    const auto p = layout.position(id);
    wall.add_probe({p.x, p.y}, options.sample_rate_hz);
  }

  const double total = options.quiescent_s + options.settle_s + options.capture_s;
  const auto n = static_cast<std::size_t>(std::llround(total * options.sample_rate_hz));
  const auto end_us = std::llround(static_cast<double>(n - 1) * 1e6 / options.sample_rate_hz);
  const auto start_us = std::llround(options.quiescent_s * 1e6);
  const auto wire = proto::duty_to_wire(options.duty);
  std::array<std::uint16_t, proto::kFansPerModule> duties{};
  duties.fill(wire);

  constexpr std::int64_t kStep = 100'000;  // resend well inside the watchdog
  std::uint32_t seq = 0;
  // Frames sent after advance_to(t) are applied at t.
  for (std::int64_t t = 0;;) {
    wall.advance_to(t);
    if (t >= end_us) break;
    if (t >= start_us) {
      for (int m = 0; m < proto::kModules; ++m) {
        wall.send(m, proto::encode_frame(proto::make_set_pwm(static_cast<std::uint8_t>(m), seq, t, duties)));
      }
      ++seq;
    }
    std::int64_t next = t + kStep;
    if (t < start_us && next > start_us) next = start_us;
    t = std::min<std::int64_t>(next, end_us);
  }

  flowlab::SensorLog log;
  log.meta.sample_rate_hz = options.sample_rate_hz;
  log.meta.units = flowlab::Units::Speed;
  log.meta.rpm_setting = calib.duty_rpm.eval(options.duty);
  log.meta.quiescent = flowlab::Window{0.0, options.quiescent_s};
  log.meta.analysis = flowlab::Window{options.quiescent_s + options.settle_s, total};
  log.meta.seed = options.emulator.seed;

  std::mt19937_64 rng(emu::module_seed(options.emulator.seed, 1000));
  std::uniform_real_distribution<double> offset(-options.offset_max, options.offset_max);
  for (int id = 1; id <= flowlab::kSensors; ++id) {
    flowlab::SensorTimeSeries s;
    s.sensor_id = id;
    s.sample_rate = options.sample_rate_hz;
    s.rpm_setting = log.meta.rpm_setting;
    const auto& samples = wall.probe_samples(id - 1);
    const double off = options.offset_max > 0 ? offset(rng) : 0.0;
    s.samples.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(std::min(n, samples.size())));
    for (auto& v : s.samples) v += off;
    log.series.emplace(id, std::move(s));
  }
  return log;
}

std::map<int, double> expected_grid_means(const calib::Calibration& calib, const emu::EmulatorConfig& config,
                                          double duty) {
  const emu::PlumeField field(config.geometry, config.plume, calib);
  const auto layout = layout_for(config.geometry);
  std::array<double, proto::kFans> rpm{};
  rpm.fill(std::clamp(calib.duty_rpm.eval(duty), 0.0, emu::kMaxRpm));
  std::map<int, double> out;
  for (int id = 1; id <= flowlab::kSensors; ++id) {
    const auto p = layout.position(id);
    const emu::VirtualSensor probe(field, {p.x, p.y}, 1000.0, 0);
    out[id] = probe.steady_speed(rpm);
  }
  return out;
}

}  // namespace gustwall::sim
