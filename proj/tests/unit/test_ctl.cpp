#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "gustwall/ctl.hpp"
#include "gustwall/sim.hpp"
#include "gustwall/util.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace gustwall;
using namespace gustwall::ctl;

namespace {

const calib::Calibration kCal = calib::default_calibration();

struct RecordingSink : FrameSink {
  std::map<int, std::vector<proto::Bytes>> frames;
  void send(int module_index, const proto::Bytes& datagram) override { frames[module_index].push_back(datagram); }

  bool last_frames_zero() const {
    if (frames.size() != static_cast<std::size_t>(kModules)) return false;
    for (const auto& [m, list] : frames) {
      const auto f = std::get<proto::Frame>(proto::decode_frame(list.back()));
      if (f.type != proto::MsgType::SetPwm) return false;
      for (auto d : std::get<proto::SetPwmPayload>(f.payload).duties) {
        if (d != 0) return false;
      }
    }
    return true;
  }
};

GustProfile square(double f, double duration, Unit unit = Unit::Speed, double lo = 1.3, double hi = 3.4) {
  GustProfile p;
  p.kind = ProfileKind::Square;
  p.unit = unit;
  p.lo = lo;
  p.hi = hi;
  p.frequency_hz = f;
  p.duration_s = duration;
  return p;
}

SessionResult run_null(const GustProfile& p, SessionOptions o = {}) {
  RecordingSink sink;
  Session s(compile_profile(p, kCal), kCal, o, sink);
  TelemetrySnapshot snap;
  while (!s.done_ticking()) s.step(snap, s.tick_time_us(s.next_tick()));
  s.stop(SessionStatus::Completed, snap, s.tick_time_us(s.tick_count()));
  return s.take_result();
}

}  // namespace

TEST_SUITE("ctl") {
  TEST_CASE("profile parsing") {
    const auto p = parse_profile(R"({"kind":"square","unit":"speed","lo":1.3,"hi":3.4,"frequency":0.25,"duration":8})");
    CHECK(p.kind == ProfileKind::Square);
    CHECK(p.frequency_hz == 0.25);
    CHECK(p.effective_duration() == 8.0);
    CHECK(parse_profile(profile_to_json(p)).hi == 3.4);

    const auto pw = parse_profile(R"({"kind":"piecewise","unit":"duty","steps":[[2,0.2],{"duration":3,"target":0.9}]})");
    CHECK(pw.effective_duration() == 5.0);
    CHECK(pw.lo == 0.2);
    CHECK(pw.hi == 0.9);

    auto invalid = [](const char* text) {
      try {
        parse_profile(text);
      } catch (const ControlError& e) {
        return e.code() == ErrorCode::InvalidProfile && e.category() == Error::Category::InputData;
      }
      return false;
    };
    CHECK(invalid("not json"));
    CHECK(invalid(R"({"kind":"square","lo":1,"hi":2,"frequency":0})"));
    CHECK(invalid(R"({"kind":"square","lo":3,"hi":2,"frequency":1})"));
    CHECK(invalid(R"({"kind":"steady","level":1,"colour":"red"})"));
    CHECK(invalid(R"({"kind":"wobble"})"));
    CHECK(invalid(R"({"kind":"piecewise","steps":[[0,1]]})"));
    CHECK(invalid(R"({"kind":"steady","level":1,"duration":-1})"));
    CHECK(invalid(R"({"kind":"steady","unit":"duty","level":0.5,"mask":[135]})"));
  }

  TEST_CASE("missing profile file is a usage error") {
    try {
      load_profile("/nonexistent/profile.json");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.category() == Error::Category::Usage);
    }
  }

  TEST_CASE("speed beyond calibration is a range error") {
    GustProfile p;
    p.kind = ProfileKind::Steady;
    p.lo = p.hi = 5.0;
    p.duration_s = 1;
    try {
      compile_profile(p, kCal);
      FAIL("expected RangeError");
    } catch (const ControlError& e) {
      CHECK(e.code() == ErrorCode::RangeError);
    }
  }

  TEST_CASE("square schedule") {
    const auto s = compile_profile(square(0.25, 8), kCal);
    for (double t : {0.0, 0.5, 1.0, 1.999}) CHECK(s.level_at(t) == doctest::Approx(0.5).epsilon(1e-12));
    for (double t : {2.0, 3.0, 3.999}) CHECK(s.level_at(t) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.level_at(4.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.phase_at(1.0) == doctest::Approx(M_PI / 2));
  }

  TEST_CASE("steady and sine schedules") {
    GustProfile p;
    p.kind = ProfileKind::Steady;
    p.lo = p.hi = 3.4;
    p.duration_s = 10;
    CHECK(compile_profile(p, kCal).level_at(4.0) == doctest::Approx(1.0).epsilon(1e-12));
    p.lo = p.hi = 0.0;
    CHECK(compile_profile(p, kCal).level_at(4.0) == 0.0);

    GustProfile sine = square(0.5, 4);
    sine.kind = ProfileKind::Sine;
    const auto s = compile_profile(sine, kCal);
    for (double t = 0; t < 4; t += 0.05) {
      const double v = 2.35 - 1.05 * std::cos(2 * M_PI * 0.5 * t);
      CHECK(s.level_at(t) == doctest::Approx(calib::speed_to_duty(kCal, v).duty).epsilon(1e-9));
    }
  }

  TEST_CASE("steady-sweep preset has six 50 s segments") {
    const auto s = compile_profile(load_profile(GUSTWALL_PRESET_DIR "/steady-sweep.json"), kCal);
    REQUIRE(s.segments().size() == 6);
    const double speeds[] = {0.5, 1.1, 1.7, 2.2, 2.7, 3.4};
    for (int i = 0; i < 6; ++i) {
      CHECK(s.segments()[i].start_s == 50.0 * i);
      CHECK(s.segments()[i].end_s == 50.0 * (i + 1));
      CHECK(s.segments()[i].target == speeds[i]);
    }
    CHECK(s.duration() == 300.0);
  }

  TEST_CASE("mask limits which fans move") {
    GustProfile p;
    p.kind = ProfileKind::Steady;
    p.unit = Unit::Duty;
    p.lo = p.hi = 0.8;
    p.duration_s = 1;
    p.mask = {0, 10, 134};
    const auto d = compile_profile(p, kCal).duties_at(0.2);
    int on = 0;
    for (double x : d) on += x > 0;
    CHECK(on == 3);
    CHECK(d[10] == 0.8);
  }

  TEST_CASE("sync events: one per program change") {
    const auto r = run_null(square(0.25, 8));
    REQUIRE(r.events.size() == 5);
    CHECK(r.events[0].kind == SyncKind::Start);
    CHECK(r.events[1].timestamp_us == 2'000'000);
    CHECK(r.events[1].old_duty == doctest::Approx(0.5));
    CHECK(r.events[1].new_duty == doctest::Approx(1.0));
    CHECK(r.events.back().kind == SyncKind::Stop);
    int edges = 0;
    for (const auto& e : r.events) edges += e.kind != SyncKind::Stop;
    CHECK(edges == 4);

    const auto r8 = run_null(square(0.125, 32));
    CHECK(r8.events.size() - 1 == 8);
  }

  TEST_CASE("sync event count property") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> freq(0.05, 2.0), dur(1.0, 40.0);
    for (int trial = 0; trial < 60; ++trial) {
      const double f = std::round(freq(rng) * 100) / 100;
      const double T = std::round(dur(rng) * 20) / 20;
      const double halves = 2 * T * f;
      // Skip durations that end within a tick of an edge.
      if (std::abs(halves - std::round(halves)) * 20 / (2 * f) < 1.5 && std::round(halves) != halves) continue;
      const auto r = run_null(square(f, T));
      CHECK(r.events.size() == static_cast<std::size_t>(std::ceil(halves - 1e-9)) + 1);
      if (halves == std::floor(halves) && std::fmod(halves, 2.0) == 0.0) {
        CHECK(r.events.size() == static_cast<std::size_t>(1 + 2 * std::floor(T * f)));
      }
    }
  }

  TEST_CASE("step in a piecewise program gives exactly one event at that tick") {
    GustProfile p;
    p.kind = ProfileKind::Piecewise;
    p.unit = Unit::Duty;
    p.steps = {{2.0, 0.5}, {2.0, 1.0}};
    const auto r = run_null(p);
    std::vector<SyncEvent> edges;
    for (const auto& e : r.events) {
      if (e.kind == SyncKind::Edge) edges.push_back(e);
    }
    REQUIRE(edges.size() == 1);
    CHECK(edges[0].timestamp_us == 2'000'000);
  }

  TEST_CASE("open loop duty equals the schedule exactly") {
    const auto p = square(0.5, 6);
    const auto sched = compile_profile(p, kCal);
    const auto r = run_null(p);
    REQUIRE(r.records.size() == 121);
    for (std::size_t k = 0; k + 1 < r.records.size(); ++k) {
      CHECK(r.records[k].duty == sched.duties_at(static_cast<double>(k) / 20.0));
    }
    for (double d : r.records.back().duty) CHECK(d == 0.0);
  }

  TEST_CASE("session leaves every module at zero on all exit paths") {
    for (int path = 0; path < 3; ++path) {
      RecordingSink sink;
      {
        Session s(compile_profile(square(0.5, 4), kCal), kCal, {}, sink);
        TelemetrySnapshot snap;
        for (int k = 0; k < 30; ++k) s.step(snap, s.tick_time_us(k));
        if (path == 0) s.stop(SessionStatus::Aborted, snap, s.tick_time_us(30), "operator");
        if (path == 1) {
          while (!s.done_ticking()) s.step(snap, s.tick_time_us(s.next_tick()));
          s.stop(SessionStatus::Completed, snap, s.tick_time_us(s.tick_count()));
        }
        // path 2: destroyed mid-run
      }
      CHECK(sink.last_frames_zero());
    }
  }

  TEST_CASE("PI: zero error means no integral growth") {
    PiState pi;
    for (int i = 0; i < 100; ++i) CHECK(pi.update(0.42, 0.0, 0.05) == doctest::Approx(0.42));
    CHECK(pi.integral == 0.0);
  }

  TEST_CASE("PI: integral stays bounded") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ff(0.0, 1.0), err(-4000, 4000), dt(0.001, 1.0);
    PiState pi;
    for (int i = 0; i < 20000; ++i) {
      const double out = pi.update(ff(rng), err(rng), dt(rng));
      CHECK(out >= 0.0);
      CHECK(out <= 1.0);
      CHECK(std::abs(pi.gains.ki * pi.integral) <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("PI: saturation stops integration") {
    PiState pi;
    for (int i = 0; i < 100; ++i) pi.update(1.0, 500.0, 0.05);
    CHECK(pi.saturated);
    CHECK(pi.integral == 0.0);
  }

  TEST_CASE("telemetry store accounting") {
    TelemetryStore store;
    std::array<std::uint16_t, 9> r{};
    r[0] = 1000;
    store.ingest(proto::encode_frame(proto::make_tach_report(2, 10, 0, r)), 100);
    store.ingest(proto::encode_frame(proto::make_tach_report(2, 13, 0, r)), 200);  // lost 11, 12
    store.ingest(proto::encode_frame(proto::make_tach_report(2, 12, 0, r)), 300);  // late, dropped
    store.ingest(proto::encode_frame(proto::make_pong(4, 1, 0)), 300);
    const std::uint8_t junk[2] = {0, 1};
    store.ingest(junk, 400);
    const auto s = store.snapshot();
    CHECK(s.modules[2].lost == 2);
    CHECK(s.modules[2].reordered == 1);
    CHECK(s.modules[2].received == 2);
    CHECK(s.modules[2].rpm[0] == 1000.0);
    CHECK(*s.modules[2].last_rx_us == 200);
    CHECK(s.malformed == 1);
    CHECK(s.ponged.test(4));
    CHECK(s.lost_total() == 2);
    const auto stale = s.stale(200 + 150'000, 150'000);
    CHECK_FALSE(stale.test(2));
    CHECK(stale.test(0));
    CHECK(s.stale(200 + 150'001, 150'000).test(2));
  }

  TEST_CASE("events CSV round trip") {
    const auto r = run_null(square(0.5, 3));
    const auto back = parse_events_csv(events_csv(r.events));
    REQUIRE(back.size() == r.events.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].timestamp_us == r.events[i].timestamp_us);
      CHECK(back[i].kind == r.events[i].kind);
      CHECK(back[i].new_duty == r.events[i].new_duty);
      CHECK(back[i].phase == r.events[i].phase);
    }
    CHECK_THROWS(parse_events_csv("timestamp_us,kind\n"));
    CHECK_THROWS(parse_events_csv("# gustwall-events v1\ntimestamp_us,kind,old_duty,new_duty,phase\n"
                                  "5,edge,0,1,0\n4,edge,1,0,0\n"));
  }

  TEST_CASE("run directory") {
    const auto parent = testsupport::scratch_dir("rundir");
    const auto p = square(0.25, 8);
    const auto sched = compile_profile(p, kCal);
    SessionOptions o;
    o.seed = 7;
    const auto r = run_null(p, o);
    RunInfo info;
    info.started_utc = utc_iso8601();
    const auto dir = write_run_directory(parent, sched, o, r, info);
    CHECK(std::filesystem::exists(dir / "telemetry.csv"));
    CHECK(std::filesystem::exists(dir / "events.csv"));
    const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
    CHECK(m["seed"] == 7);
    CHECK(m["status"] == "completed");
    CHECK(m["counts"]["events"] == 5);
    CHECK(m["config_hash"] == config_hash(sched, o));
    CHECK(m["calib_hash"].is_string());
    CHECK(m["tool"] == "gustwall");
    // One header comment, one column header, one line per record.
    const auto telemetry = read_file(dir / "telemetry.csv");
    CHECK(std::count(telemetry.begin(), telemetry.end(), '\n') == static_cast<long>(r.records.size()) + 2);
    // Name: UTC stamp, dash, 8 hex digits.
    const auto name = dir.filename().string();
    CHECK(name.size() == 16 + 1 + 8);
    CHECK(name[16] == '-');
    // A second run in the same second gets a different directory.
    CHECK(write_run_directory(parent, sched, o, r, info) != dir);
  }

  TEST_CASE("config hash tracks settings") {
    const auto sched = compile_profile(square(0.25, 8), kCal);
    SessionOptions a, b;
    b.closed_loop = true;
    CHECK(config_hash(sched, a) == config_hash(sched, a));
    CHECK(config_hash(sched, a) != config_hash(sched, b));
  }

  TEST_CASE("deterministic telemetry for a seed") {
    const auto sched = compile_profile(square(0.5, 4), kCal);
    sim::SimRunOptions o;
    o.emulator.seed = 7;
    o.session.closed_loop = true;
    const auto a = sim::run_session_sim(sched, kCal, o);
    const auto b = sim::run_session_sim(sched, kCal, o);
    CHECK(telemetry_csv(a.session.records) == telemetry_csv(b.session.records));
    o.emulator.seed = 8;
    const auto c = sim::run_session_sim(sched, kCal, o);
    CHECK(telemetry_csv(a.session.records) != telemetry_csv(c.session.records));
  }

  TEST_CASE("replaying the command log reproduces the RPM trajectory") {
    const auto sched = compile_profile(square(0.5, 6), kCal);
    sim::SimRunOptions o;
    o.emulator.seed = 3;
    std::vector<std::array<double, kFans>> live;
    const auto r = sim::run_session_sim(sched, kCal, o, [&](const TelemetryRecord&, const emu::SimWall& w) {
      live.push_back(w.fan_rpms());
      return true;
    });
    emu::EmulatorConfig cfg;
    cfg.seed = 99;  // different noise; the dynamics must not care
    emu::SimWall wall(cfg, kCal);
    std::array<std::uint32_t, kModules> seq{};
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto& rec = r.session.records[k];
      wall.advance_to(rec.timestamp_us);
      const auto rpm = wall.fan_rpms();
      for (int i = 0; i < kFans; ++i) CHECK(std::abs(rpm[i] - live[k][i]) <= 1.0);
      for (int m = 0; m < kModules; ++m) {
        std::array<std::uint16_t, 9> d{};
        for (int j = 0; j < 9; ++j) d[j] = proto::duty_to_wire(rec.duty[m * 9 + j]);
        wall.send(m, proto::encode_frame(proto::make_set_pwm(m, ++seq[m], rec.timestamp_us, d)));
      }
    }
  }

  TEST_CASE("closed loop steady-state error under 1% for targets >= 600 RPM") {
    // With a +-10% gain spread a fan can only reach 0.9 * 3600 RPM, so targets stay below that.
    for (double duty : {600.0 / 3600.0, 0.5, 0.85}) {
      GustProfile p;
      p.kind = ProfileKind::Steady;
      p.unit = Unit::Duty;
      p.lo = p.hi = duty;
      p.duration_s = 10;
      sim::SimRunOptions o;
      o.session.closed_loop = true;
      o.emulator.endpoint.gain_spread = 0.1;
      double worst = 0;
      sim::run_session_sim(compile_profile(p, kCal), kCal, o, [&](const TelemetryRecord& rec, const emu::SimWall& w) {
        if (rec.timestamp_us < 5'000'000) return true;
        const double target = kCal.duty_rpm.eval(duty);
        for (double v : w.fan_rpms()) worst = std::max(worst, std::abs(v - target) / target);
        return true;
      });
      CHECK(worst < 0.01);
    }
  }

  TEST_CASE("stale telemetry falls back to feedforward") {
    GustProfile p;
    p.kind = ProfileKind::Steady;
    p.unit = Unit::Duty;
    p.lo = p.hi = 0.6;
    p.duration_s = 4;
    sim::SimRunOptions o;
    o.session.closed_loop = true;
    o.kills = {{5, 1'000'000}};
    const auto r = sim::run_session_sim(compile_profile(p, kCal), kCal, o);
    CHECK(r.session.status == SessionStatus::Degraded);
    CHECK(r.session.silent_modules.test(5));
    const auto& late = r.session.records[60];
    CHECK(late.stale_modules == 1);
    for (int j = 0; j < 9; ++j) CHECK(late.duty[5 * 9 + j] == doctest::Approx(0.6));
  }
}
