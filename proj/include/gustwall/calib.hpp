#pragma once

// Monotone calibration curves: duty -> RPM, RPM -> centerline wind speed at
// the 1 m test plane, and per-sensor raw reading -> m/s.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gustwall/error.hpp"

namespace gustwall::calib {

enum class ErrorCode { InvalidCurve, NotInvertible, DegenerateInput, BadFile };

class CalibError : public Error {
 public:
  CalibError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Domain { DutyToRpm, RpmToSpeed, RawToSpeed };

std::string_view to_string(Domain domain);

struct Knot {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Knot&, const Knot&) = default;
};

// Piecewise-linear curve through >= 2 knots with strictly increasing x and
// non-decreasing y. Evaluation clamps outside the knot range. Immutable.
class CalibrationCurve {
 public:
  CalibrationCurve(Domain domain, std::vector<Knot> knots);

  Domain domain() const noexcept { return domain_; }
  const std::vector<Knot>& knots() const noexcept { return knots_; }

  double eval(double x) const;

  // Inverse on the strictly increasing part. Values below/above the output
  // range clamp to the first/last input; a y that lies on a flat segment has
  // no unique preimage and throws NotInvertible.
  double eval_inverse(double y) const;

  double x_min() const noexcept { return knots_.front().x; }
  double x_max() const noexcept { return knots_.back().x; }
  double y_min() const noexcept { return knots_.front().y; }
  double y_max() const noexcept { return knots_.back().y; }

  friend bool operator==(const CalibrationCurve&, const CalibrationCurve&) = default;

 private:
  Domain domain_;
  std::vector<Knot> knots_;
};

// Sorts by x, merges duplicate x by averaging, then pool-adjacent-violators
// so the outputs are non-decreasing. Throws DegenerateInput below 2 distinct x.
CalibrationCurve fit_monotone(Domain domain, std::vector<Knot> points);

struct SensorCalibration {
  // Keyed by sensor id 1..15.
  std::map<int, CalibrationCurve> sensors;

  bool complete() const;
  const CalibrationCurve& at(int sensor_id) const;
};

// The wall's two chained curves plus optional sensing-grid calibration.
struct Calibration {
  CalibrationCurve duty_rpm;
  CalibrationCurve rpm_speed;
  SensorCalibration sensors;

  // Steady centerline speed for a duty, via duty -> rpm -> speed.
  double speed_for_duty(double duty) const { return rpm_speed.eval(duty_rpm.eval(duty)); }
  double max_speed() const { return rpm_speed.eval(duty_rpm.y_max()); }
};

// Only the text-anchored points: duty 0 -> 0 RPM, duty 1 -> 3600 RPM
// (linear placeholder), and 1800 RPM (duty 0.5) -> 1.3 m/s, 3600 RPM -> 3.4 m/s.
Calibration default_calibration();

struct DutyForSpeed {
  double duty = 0.0;
  bool clamped = false;
};

// Composes speed -> rpm -> duty through the inverses; out-of-range speeds are
// clamped and flagged rather than rejected.
DutyForSpeed speed_to_duty(const Calibration& calib, double speed_mps);

// "# gustwall-calib v1" CSV with columns domain,x,y. Domains are
// duty_rpm, rpm_speed, and sensor:<id> for grid sensors.
std::string to_csv(const Calibration& calib);
Calibration parse_csv(std::string_view text);
Calibration load(const std::filesystem::path& path);

// Writes a single curve (e.g. an rpm->speed table) in the same format.
std::string curve_to_csv(const CalibrationCurve& curve, int sensor_id = 0);

// Hash of the canonical serialization, recorded in run manifests.
std::string calibration_hash(const Calibration& calib);

}  // namespace gustwall::calib
