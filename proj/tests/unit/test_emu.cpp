#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "gustwall/emu.hpp"

using namespace gustwall;
using namespace gustwall::emu;

namespace {

const calib::Calibration kCal = calib::default_calibration();

std::vector<double> uniform_rpm(double rpm) { return std::vector<double>(proto::kFans, rpm); }

}  // namespace

TEST_SUITE("emu") {
  TEST_CASE("step_fan closed form") {
    FanState s;
    s = step_fan(s, 1.0, 0.3, kCal.duty_rpm);
    CHECK(s.rpm == doctest::Approx(3600.0 * (1.0 - std::exp(-1.0))).epsilon(1e-12));
    CHECK(std::lround(s.rpm) == 2276);

    // Many small steps compose to the same exponential.
    FanState a;
    for (int i = 0; i < 1000; ++i) a = step_fan(a, 0.7, 0.001, kCal.duty_rpm);
    CHECK(a.rpm == doctest::Approx(2520.0 * (1.0 - std::exp(-1.0 / 0.3))).epsilon(1e-9));

    FanState z;
    CHECK(step_fan(z, 0.0, 5.0, kCal.duty_rpm).rpm == 0.0);
    FanState up;
    for (int i = 0; i < 100; ++i) up = step_fan(up, 1.0, 0.1, kCal.duty_rpm);
    CHECK(up.rpm == doctest::Approx(3600.0).epsilon(1e-9));
  }

  TEST_CASE("rpm stays in range at any step size") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> duty(-0.5, 1.5), dt(1e-6, 100.0);
    FanState s;
    for (int i = 0; i < 5000; ++i) {
      s = step_fan(s, duty(rng), dt(rng), kCal.duty_rpm, 1.3);
      CHECK(s.rpm >= 0.0);
      CHECK(s.rpm <= 3600.0);
    }
  }

  TEST_CASE("tachometer") {
    std::mt19937_64 rng(1);
    CHECK(tach_read(FanState{0.0, 0.0, 0.3}, rng) == 0);
    for (int i = 0; i < 100; ++i) {
      const int r = tach_read(FanState{3600.4, 1.0, 0.3}, rng);
      CHECK(r >= 3599);
      CHECK(r <= 3601);
    }
    double sum = 0;
    for (int i = 0; i < 10000; ++i) sum += tach_read(FanState{1800.0, 0.5, 0.3}, rng);
    CHECK(std::abs(sum / 10000 - 1800.0) <= 0.1);
  }

  TEST_CASE("geometry tiles the rectangle") {
    ArrayGeometry g;
    CHECK(g.area() == doctest::Approx(0.9));
    CHECK(g.fan_columns() * g.fan_rows() == proto::kFans);
    std::set<std::pair<long, long>> seen;
    for (int i = 0; i < proto::kFans; ++i) {
      const auto p = g.fan_center(i);
      CHECK(g.contains(p));
      seen.insert({std::lround(p.x * 1e6), std::lround(p.y * 1e6)});
    }
    CHECK(seen.size() == static_cast<std::size_t>(proto::kFans));
    CHECK_FALSE(g.contains({1.3, 0.1}));
  }

  TEST_CASE("envelope and TI fields") {
    PlumeField f(ArrayGeometry{}, PlumeModel{}, kCal);
    CHECK(f.envelope({0.6, 0.375}) == 1.0);
    CHECK(f.envelope({0.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-12));
    // Monotone decrease from the center towards each edge.
    double prev = 2.0;
    for (double x = 0.6; x >= 0.0; x -= 0.01) {
      const double e = f.envelope({x, 0.375});
      CHECK(e <= prev + 1e-15);
      prev = e;
    }
    CHECK(f.ti_at({0.6, 0.375}) == doctest::Approx(0.03));
    CHECK(f.ti_at({0.01, 0.01}) == doctest::Approx(0.22));
    CHECK_THROWS_AS(f.kernel_weights({2.0, 0.1}), EmuError);
    const auto w = f.kernel_weights({0.3, 0.2});
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("noise-free plume") {
    PlumeField f(ArrayGeometry{}, PlumeModel{}, kCal);
    VirtualSensor center(f, {0.6, 0.375}, 1000.0, 1);
    const auto full = uniform_rpm(3600.0);
    CHECK(center.steady_speed(full) == doctest::Approx(3.4).epsilon(1e-12));
    CHECK(center.steady_speed(uniform_rpm(0.0)) == 0.0);
    VirtualSensor corner(f, {0.12, 0.125}, 1000.0, 1);
    CHECK(corner.steady_speed(full) < center.steady_speed(full));
  }

  TEST_CASE("plume time average and TI at the core") {
    PlumeField f(ArrayGeometry{}, PlumeModel{}, kCal);
    VirtualSensor s(f, {0.6, 0.375}, 3000.0, 17);
    const auto full = uniform_rpm(3600.0);
    std::vector<double> v;
    for (int k = 0; k < 3000 * 20; ++k) v.push_back(s.sample(full, k / 3000.0));
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double ti = std::sqrt(ss / (v.size() - 1)) / mean;
    CHECK(std::abs(mean - 3.4) <= 0.1);
    CHECK(ti >= 0.015);
    CHECK(ti <= 0.05);
  }

  TEST_CASE("all fans stopped gives still air") {
    PlumeField f(ArrayGeometry{}, PlumeModel{}, kCal);
    VirtualSensor s(f, {0.3, 0.3}, 1000.0, 2);
    const auto zero = uniform_rpm(0.0);
    for (int k = 0; k < 500; ++k) CHECK(s.sample(zero, k / 1000.0) == 0.0);
  }

  TEST_CASE("transport delay") {
    PlumeField f(ArrayGeometry{}, PlumeModel{}, kCal);
    CHECK(f.transport_delay(3.4) == doctest::Approx(1.0 / 3.4));
    CHECK(f.transport_delay(10.0) == doctest::Approx(0.25));
    CHECK(f.transport_delay(0.0) == doctest::Approx(2.0));
  }

  TEST_CASE("endpoint: ping, set_pwm, telemetry, watchdog") {
    ModuleEndpoint ep(3, EndpointConfig{}, kCal.duty_rpm, 42);
    const auto pong = ep.handle(proto::encode_frame(proto::make_ping(3, 77, 0)), 0);
    REQUIRE(pong);
    const auto f = std::get<proto::Frame>(proto::decode_frame(*pong));
    CHECK(f.type == proto::MsgType::Pong);
    CHECK(f.seq == 77);

    std::array<std::uint16_t, 9> full;
    full.fill(10000);
    CHECK_FALSE(ep.handle(proto::encode_frame(proto::make_set_pwm(3, 1, 0, full)), 0));
    CHECK(ep.duties()[0] == 1.0);

    // Misrouted and garbage frames are counted.
    ep.handle(proto::encode_frame(proto::make_set_pwm(4, 1, 0, {})), 0);
    const std::uint8_t junk[3] = {1, 2, 3};
    ep.handle(junk, 0);
    CHECK(ep.counters().misrouted == 1);
    CHECK(ep.counters().malformed == 1);

    const auto reports = ep.advance(1'000'000);
    CHECK(reports.size() == 21);  // 20 Hz over [0, 1 s], both ends
    CHECK(ep.rpms()[0] == doctest::Approx(3600.0 * (1 - std::exp(-1.0 / 0.3))).epsilon(1e-9));

    // No command for more than 2 s: duties forced to zero.
    ep.advance(1'990'000);
    CHECK_FALSE(ep.watchdog_tripped());
    ep.advance(2'100'000);
    CHECK(ep.watchdog_tripped());
    CHECK(ep.duties()[0] == 0.0);
    ep.advance(10'000'000);
    CHECK(ep.rpms()[0] < 1.0);
  }

  TEST_CASE("all-zero command decays all nine fans") {
    ModuleEndpoint ep(0, EndpointConfig{}, kCal.duty_rpm, 1);
    std::array<std::uint16_t, 9> full;
    full.fill(10000);
    ep.handle(proto::encode_frame(proto::make_set_pwm(0, 1, 0, full)), 0);
    ep.advance(1'500'000);
    ep.handle(proto::encode_frame(proto::make_set_pwm(0, 2, 0, {})), 1'500'000);
    ep.advance(1'900'000);
    ep.handle(proto::encode_frame(proto::make_set_pwm(0, 3, 0, {})), 1'900'000);
    ep.advance(3'500'000);
    for (double r : ep.rpms()) CHECK(r < 3600.0 * std::exp(-2.0 / 0.3) + 1e-6);
  }

  TEST_CASE("deterministic for a seed") {
    auto run = [](std::uint64_t seed) {
      ModuleEndpoint ep(5, EndpointConfig{}, kCal.duty_rpm, module_seed(seed, 5));
      std::array<std::uint16_t, 9> d;
      d.fill(6000);
      ep.handle(proto::encode_frame(proto::make_set_pwm(5, 1, 0, d)), 0);
      return ep.advance(1'500'000);
    };
    CHECK(run(7) == run(7));
    CHECK(run(7) != run(8));
  }

  TEST_CASE("config file") {
    const auto c = parse_emulator_config(
        "seed = 9\n# comment\n[fan]\ntau_s = 0.5\n[plume]\nti_core = 0.04\n[endpoint]\nwatchdog_s = 3\n");
    CHECK(c.seed == 9);
    CHECK(c.endpoint.tau_s == 0.5);
    CHECK(c.plume.ti_core == 0.04);
    CHECK(c.endpoint.watchdog_s == 3.0);
    CHECK_THROWS(parse_emulator_config("[fan]\nspin = 2\n"));
    CHECK_THROWS(parse_emulator_config("[plume]\nti_core = 0.5\nti_boundary = 0.2\n"));
  }

  TEST_CASE("sim wall kill") {
    SimWall wall(EmulatorConfig{}, kCal);
    wall.kill(2);
    wall.send(2, proto::encode_frame(proto::make_ping(2, 1, 0)));
    wall.send(3, proto::encode_frame(proto::make_ping(3, 1, 0)));
    const auto out = wall.advance_to(10'000);
    int pongs = 0;
    for (const auto& b : out) {
      const auto f = std::get<proto::Frame>(proto::decode_frame(b));
      if (f.type == proto::MsgType::Pong) {
        ++pongs;
        CHECK(f.module_index == 3);
      }
      CHECK(f.module_index != 2);
    }
    CHECK(pongs == 1);
  }
}
