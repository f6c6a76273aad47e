#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gustwall/flightlab.hpp"
#include "gustwall/util.hpp"
#include "spline_oracle.hpp"

using namespace gustwall;
using namespace gustwall::flightlab;

namespace {

std::vector<Point> flapper_points() {
  std::vector<Point> pts;
  const auto means = fixture_power_means(Vehicle::Flapper);
  for (std::size_t i = 0; i < kSweepSpeeds.size(); ++i) pts.push_back({kSweepSpeeds[i], means[i], 1.0});
  return pts;
}

FlightRecord rec(std::int64_t t, double pitch, double v, double i, double cond) {
  FlightRecord r;
  r.timestamp_us = t;
  r.pitch = pitch;
  r.voltage = v;
  r.current = i;
  r.condition = cond;
  return r;
}

}  // namespace

TEST_SUITE("flightlab") {
  TEST_CASE("type-7 quantiles") {
    std::vector<double> v(10);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(quantile_type7(v, 0.25) == doctest::Approx(3.25));
    CHECK(quantile_type7(v, 0.5) == doctest::Approx(5.5));
    CHECK(quantile_type7(v, 0.75) == doctest::Approx(7.75));
    CHECK(quantile_type7(v, 0.0) == 1.0);
    CHECK(quantile_type7(v, 1.0) == 10.0);
    const auto b = box_stats({5, 1, 4, 2, 3});
    CHECK(b.min == 1);
    CHECK(b.q1 == 2);
    CHECK(b.median == 3);
    CHECK(b.q3 == 4);
    CHECK(b.max == 5);
    CHECK(b.mean == 3);
    CHECK(b.n == 5);
  }

  TEST_CASE("condition stats group and validate") {
    std::vector<FlightRecord> r;
    std::int64_t t = 0;
    for (int i = 0; i < 6; ++i) r.push_back(rec(t += 10, 5 + i, 4.0, 2.0, 1.1));
    for (int i = 0; i < 5; ++i) r.push_back(rec(t += 10, 10, 4.0, 3.0, 0.5));
    const auto pitch = condition_stats(r, Field::Pitch);
    REQUIRE(pitch.size() == 2u);
    CHECK(pitch[0].condition == 0.5);
    CHECK(pitch[1].stats.median == doctest::Approx(7.5));
    const auto power = condition_stats(r, Field::Power);
    CHECK(power[0].stats.mean == doctest::Approx(12.0));
    CHECK(power[1].stats.mean == doctest::Approx(8.0));

    r.push_back(rec(t += 10, 1, 4.0, 1.0, 2.2));
    r.push_back(rec(t += 10, 1, 4.0, 1.0, 3.4));
    try {
      condition_stats(r, Field::Pitch);
      FAIL("expected TooFewSamples");
    } catch (const FlightError& e) {
      CHECK(e.code() == ErrorCode::TooFewSamples);
      CHECK(std::string(e.what()).find("2.2") != std::string::npos);
      CHECK(std::string(e.what()).find("3.4") != std::string::npos);
    }
  }

  TEST_CASE("flight CSV round trip and errors") {
    const auto records = synth_steady_flight(Vehicle::Crazyflie, 1, 10);
    const auto back = parse_flight_csv(flight_csv(records));
    REQUIRE(back.size() == records.size());
    CHECK(back[17].pitch == records[17].pitch);
    CHECK(back[17].current == records[17].current);
    const std::string header = "timestamp_us,x,y,z,roll,pitch,yaw,voltage,current,condition\n";
    try {
      parse_flight_csv(header + "0,0,0,0,0,0,0,4,1,1\n5,0,0,0,0,0,0,4,1\n");
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS(parse_flight_csv(header + "5,0,0,0,0,0,0,4,1,1\n5,0,0,0,0,0,0,4,1,1\n"));
    CHECK_THROWS(parse_flight_csv(header + "5,0,0,0,0,0,0,0,1,1\n"));
  }

  TEST_CASE("spline matches the dense penalized least squares oracle") {
    const auto pts = flapper_points();
    for (double lambda : {1e-4, 0.01, 0.1, 1.0, 10.0}) {
      const auto fit = smoothing_spline(pts, lambda);
      const auto g = spline_oracle::solve(pts, lambda);
      REQUIRE(fit.value.size() == g.size());
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(fit.value[i] - g[i]) <= 1e-9);
      // Roughness agrees with the oracle's quadratic form.
      CHECK(roughness(fit) == doctest::Approx(spline_oracle::penalty(pts, g)).epsilon(1e-9));
    }
  }

  TEST_CASE("spline with weights and duplicate abscissae") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0, 0.2);
    std::vector<Point> pts;
    for (int rep = 0; rep < 3; ++rep) {
      for (double x : {0.0, 0.4, 1.1, 1.5, 2.7, 3.0, 4.2}) pts.push_back({x, std::sin(x) + noise(rng), 0.5 + rep});
    }
    const auto fit = smoothing_spline(pts, 0.05);
    const auto g = spline_oracle::solve(pts, 0.05);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(fit.value[i] - g[i]) <= 1e-9);
  }

  TEST_CASE("spline objective is minimal") {
    const auto pts = flapper_points();
    const double lambda = 0.2;
    const auto fit = smoothing_spline(pts, lambda);
    const double best = spline_objective(fit, pts, lambda);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1e-3);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> g = fit.value;
      for (auto& v : g) v += n(rng);
      const double perturbed = spline_oracle::objective(pts, g, lambda);
      CHECK(perturbed > best);
    }
  }

  TEST_CASE("spline limits") {
    const auto pts = flapper_points();
    const auto interp = smoothing_spline(pts, 1e-12);
    for (const auto& p : pts) CHECK(interp(p.x) == doctest::Approx(p.y).epsilon(1e-8));
    // lambda -> infinity: the least-squares straight line.
    const auto line = smoothing_spline(pts, 1e12);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : pts) {
      sx += p.x;
      sy += p.y;
      sxx += p.x * p.x;
      sxy += p.x * p.y;
    }
    const double n = static_cast<double>(pts.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    for (double x : {0.5, 1.0, 2.0, 3.4}) CHECK(line(x) == doctest::Approx(icpt + slope * x).epsilon(1e-6));
    CHECK(roughness(line) < 1e-9);
  }

  TEST_CASE("spline input errors") {
    CHECK_THROWS_AS(smoothing_spline({{1, 1}, {2, 2}, {3, 3}}, 1.0), FlightError);
    CHECK_THROWS_AS(smoothing_spline({{1, 1}, {1, 2}, {2, 2}, {3, 3}}, 1.0), FlightError);
    CHECK_THROWS(smoothing_spline(flapper_points(), -1.0));
  }

  TEST_CASE("leave-one-out lambda is finite and in the grid") {
    const auto pts = flapper_points();
    const auto c = choose_lambda_loo(pts);
    CHECK(c.lambda > 0);
    CHECK(std::isfinite(c.loo_error));
    const double range = 3.4 - 0.5;
    const double k = 4 * std::log10(c.lambda / (range * range * range));
    CHECK(std::abs(k - std::round(k)) < 1e-6);
  }

  TEST_CASE("figure shapes of the steady fixtures") {
    for (auto v : {Vehicle::Flapper, Vehicle::Crazyflie}) {
      const auto rows = condition_stats(synth_steady_flight(v, 3), Field::Power);
      REQUIRE(rows.size() == 6u);
      const auto want = fixture_power_means(v);
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(rows[i].condition == doctest::Approx(kSweepSpeeds[i]));
        CHECK(rows[i].stats.mean == doctest::Approx(want[i]).epsilon(1e-9));
      }
    }
    const auto f = fixture_power_means(Vehicle::Flapper);
    const auto lowest = std::min_element(f.begin(), f.end()) - f.begin();
    CHECK(lowest > 0);
    CHECK(lowest < 5);
    CHECK(f[4] == 12.7);
    CHECK(kSweepSpeeds[4] == 2.7);
    const auto c = fixture_power_means(Vehicle::Crazyflie);
    auto spread = [](const std::array<double, 6>& a) {
      return *std::max_element(a.begin(), a.end()) - *std::min_element(a.begin(), a.end());
    };
    CHECK(spread(c) < spread(f));
  }

  TEST_CASE("gust_align puts command edges at phase 0 and 0.5") {
    const auto g = synth_gust_flight(Vehicle::Flapper, 0.25, 32, 5);
    std::vector<std::int64_t> t;
    for (const auto& r : g.records) t.push_back(r.timestamp_us);
    AlignOptions o;
    o.resample = Resample::Hold;
    const auto pa = gust_align(t, g.command_speed, g.events, o);
    CHECK(pa.segments >= 2);
    CHECK(pa.period_s == doctest::Approx(4.0));
    for (int j = 0; j < 256; ++j) {
      CHECK(pa.mean[j] == doctest::Approx(j < 128 ? 3.4 : 1.3).epsilon(1e-12));
      CHECK(pa.std[j] == doctest::Approx(0.0).epsilon(1e-12));
    }
  }

  TEST_CASE("period anchors") {
    const auto g = synth_gust_flight(Vehicle::Crazyflie, 0.125, 32, 1);
    std::vector<std::int64_t> t;
    for (const auto& r : g.records) t.push_back(r.timestamp_us);
    AlignOptions rising;
    CHECK(gust_align(t, g.command_speed, g.events, rising).segments == 3);
    AlignOptions cycle;
    cycle.anchor = Anchor::CycleStart;
    const auto pa = gust_align(t, g.command_speed, g.events, cycle);
    CHECK(pa.segments == 4);
    CHECK(pa.mean[0] == doctest::Approx(1.3));
    CHECK_THROWS_AS(gust_align(std::vector<std::int64_t>(t.begin(), t.begin() + 1000),
                               std::vector<double>(g.command_speed.begin(), g.command_speed.begin() + 1000), g.events,
                               rising),
                    FlightError);
  }

  TEST_CASE("response lag of a first-order system") {
    const double fs = 100, period = 4, tau = 0.6;
    const int n = static_cast<int>(fs * period * 8);
    std::vector<double> cmd(n), resp(n);
    double y = 0;
    for (int i = 0; i < n; ++i) {
      const double t = i / fs;
      cmd[i] = std::fmod(t, period) < period / 2 ? 1.0 : 0.0;
      // exact discrete first-order step
      y = cmd[i] + (y - cmd[i]) * std::exp(-1.0 / (fs * tau));
      resp[i] = y;
    }
    const double h = period / 2;
    const double oracle = -tau * std::log((1 + std::exp(-h / tau)) / 2);
    const auto lag = response_lag(cmd, resp, fs, period);
    CHECK(std::abs(lag.lag_s - oracle) <= 1.5 / fs);
    CHECK(lag.peak > 0.8);
    CHECK_THROWS_AS(response_lag(cmd, std::vector<double>(n, 1.0), fs, period), FlightError);
    CHECK_THROWS_AS(response_lag(std::vector<double>(cmd.begin(), cmd.begin() + 500),
                                 std::vector<double>(resp.begin(), resp.begin() + 500), fs, period),
                    FlightError);
  }

  TEST_CASE("gust fixture lag follows the vehicle time constant") {
    for (auto v : {Vehicle::Flapper, Vehicle::Crazyflie}) {
      const auto g = synth_gust_flight(v, 0.25, 48, 2);
      std::vector<double> pitch;
      for (const auto& r : g.records) pitch.push_back(r.pitch);
      const double tau = fixture_response_tau(v);
      const double oracle = -tau * std::log((1 + std::exp(-2.0 / tau)) / 2);
      const auto lag = response_lag(g.command_speed, pitch, 100.0, 4.0);
      CHECK(std::abs(lag.lag_s - oracle) <= 0.05);
    }
  }
}
