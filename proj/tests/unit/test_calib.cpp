#include <random>

#include "doctest.h"
#include "gustwall/calib.hpp"
#include "gustwall/util.hpp"

using namespace gustwall::calib;

namespace {

CalibrationCurve random_curve(std::mt19937_64& rng, bool strict) {
  std::uniform_real_distribution<double> step(0.01, 2.0);
  const int n = 2 + static_cast<int>(rng() % 8);
  std::vector<Knot> k;
  double x = step(rng) - 1.0, y = step(rng);
  for (int i = 0; i < n; ++i) {
    k.push_back({x, y});
    x += step(rng);
    y += (strict || rng() % 3) ? step(rng) : 0.0;
  }
  return CalibrationCurve(Domain::RpmToSpeed, k);
}

}  // namespace

TEST_SUITE("calib") {
  TEST_CASE("text anchors of the default curves") {
    const auto c = default_calibration();
    CHECK(c.duty_rpm.eval(0.0) == 0.0);
    CHECK(c.duty_rpm.eval(1.0) == 3600.0);
    CHECK(c.rpm_speed.eval(c.duty_rpm.eval(0.5)) == doctest::Approx(1.3).epsilon(1e-12));
    CHECK(c.rpm_speed.eval(c.duty_rpm.eval(1.0)) == doctest::Approx(3.4).epsilon(1e-12));
    CHECK(c.max_speed() == doctest::Approx(3.4));
  }

  TEST_CASE("linear midpoint") {
    CalibrationCurve c(Domain::RpmToSpeed, {{0, 0}, {3600, 3.4}});
    CHECK(c.eval(1800) == doctest::Approx(1.7).epsilon(1e-15));
  }

  TEST_CASE("speed_to_duty") {
    const auto c = default_calibration();
    CHECK(speed_to_duty(c, 3.4).duty == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(speed_to_duty(c, 1.3).duty == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(speed_to_duty(c, 0.0).duty == 0.0);
    CHECK_FALSE(speed_to_duty(c, 1.3).clamped);
    const auto over = speed_to_duty(c, 5.0);
    CHECK(over.clamped);
    CHECK(over.duty == 1.0);
    CHECK(speed_to_duty(c, -1.0).clamped);
  }

  TEST_CASE("curve validation") {
    CHECK_THROWS_AS(CalibrationCurve(Domain::DutyToRpm, {{0, 0}}), CalibError);
    CHECK_THROWS_AS(CalibrationCurve(Domain::DutyToRpm, {{0, 0}, {0, 1}}), CalibError);
    CHECK_THROWS_AS(CalibrationCurve(Domain::DutyToRpm, {{0, 1}, {1, 0}}), CalibError);
  }

  TEST_CASE("clamping outside the knots is exact") {
    CalibrationCurve c(Domain::RpmToSpeed, {{100, 0.3}, {200, 0.9}, {400, 1.1}});
    CHECK(c.eval(-5) == 0.3);
    CHECK(c.eval(100) == 0.3);
    CHECK(c.eval(1e9) == 1.1);
  }

  TEST_CASE("inverse round trip and flat segments") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const auto c = random_curve(rng, true);
      std::uniform_real_distribution<double> u(c.x_min(), c.x_max());
      for (int i = 0; i < 20; ++i) {
        const double x = u(rng);
        CHECK(c.eval_inverse(c.eval(x)) == doctest::Approx(x).epsilon(1e-9).scale(1.0));
      }
    }
    CalibrationCurve flat(Domain::RpmToSpeed, {{0, 0}, {1, 1}, {2, 1}, {3, 2}});
    CHECK_THROWS_AS(flat.eval_inverse(1.0), CalibError);
    CHECK(flat.eval_inverse(0.5) == doctest::Approx(0.5));
    CHECK(flat.eval_inverse(1.5) == doctest::Approx(2.5));
  }

  TEST_CASE("monotone property") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      const auto c = random_curve(rng, false);
      std::uniform_real_distribution<double> u(c.x_min() - 1, c.x_max() + 1);
      std::vector<double> xs(50);
      for (auto& x : xs) x = u(rng);
      std::sort(xs.begin(), xs.end());
      for (std::size_t i = 1; i < xs.size(); ++i) CHECK(c.eval(xs[i - 1]) <= c.eval(xs[i]));
    }
  }

  TEST_CASE("fit_monotone") {
    // One downward blip pools the last two points.
    const auto blip = fit_monotone(Domain::RpmToSpeed, {{1, 1}, {2, 3}, {3, 2.5}});
    REQUIRE(blip.knots().size() == 3);
    CHECK(blip.knots()[0].y == 1.0);
    CHECK(blip.knots()[1].y == doctest::Approx(2.75));
    CHECK(blip.knots()[2].y == doctest::Approx(2.75));

    const std::vector<Knot> mono{{0, 0}, {1, 0.5}, {2, 0.5}, {4, 3}};
    CHECK(fit_monotone(Domain::RpmToSpeed, mono).knots() == mono);
    CHECK(fit_monotone(Domain::RpmToSpeed, {{3, 1}, {1, 0}}).knots() == std::vector<Knot>{{1, 0}, {3, 1}});
    CHECK_THROWS_AS(fit_monotone(Domain::RpmToSpeed, {{2, 1}, {2, 3}}), CalibError);
  }

  TEST_CASE("fit_monotone is idempotent") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(0, 0.3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Knot> pts;
      for (int i = 0; i < 12; ++i) pts.push_back({static_cast<double>(rng() % 30), 0.1 * i + noise(rng)});
      if (std::all_of(pts.begin(), pts.end(), [&](const Knot& k) { return k.x == pts[0].x; })) continue;
      const auto once = fit_monotone(Domain::RpmToSpeed, pts);
      const auto twice = fit_monotone(Domain::RpmToSpeed, once.knots());
      CHECK(once == twice);
    }
  }

  TEST_CASE("CSV round trip and hash") {
    auto c = default_calibration();
    for (int id = 1; id <= 15; ++id) {
      c.sensors.sensors.emplace(id, CalibrationCurve(Domain::RawToSpeed, {{0, 0}, {1.0 + id, 3.0}}));
    }
    const auto back = parse_csv(to_csv(c));
    CHECK(back.duty_rpm == c.duty_rpm);
    CHECK(back.rpm_speed == c.rpm_speed);
    CHECK(back.sensors.complete());
    CHECK(back.sensors.at(7) == c.sensors.at(7));
    CHECK(calibration_hash(back) == calibration_hash(c));
    CHECK(calibration_hash(back) != calibration_hash(default_calibration()));
  }

  TEST_CASE("CSV errors") {
    CHECK_THROWS(parse_csv("domain,x,y\nduty_rpm,0,0\n"));
    try {
      parse_csv("# gustwall-calib v1\ndomain,x,y\nduty_rpm,0,0\nduty_rpm,1,abc\n");
      FAIL("expected an error");
    } catch (const gustwall::DataError& e) {
      CHECK(e.line() == 4);
    }
  }
}
