#include "gustwall/calib.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gustwall/util.hpp"

namespace gustwall::calib {

namespace {

std::string code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidCurve: return "InvalidCurve";
    case ErrorCode::NotInvertible: return "NotInvertible";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::BadFile: return "BadFile";
  }
  return "CalibError";
}

constexpr std::string_view kHeader = "gustwall-calib v1";

}  // namespace

CalibError::CalibError(ErrorCode code, const std::string& detail)
    : Error(Category::InputData, code_name(code) + ": " + detail), code_(code) {}

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::DutyToRpm: return "duty_rpm";
    case Domain::RpmToSpeed: return "rpm_speed";
    case Domain::RawToSpeed: return "sensor";
  }
  return "unknown";
}

CalibrationCurve::CalibrationCurve(Domain domain, std::vector<Knot> knots)
    : domain_(domain), knots_(std::move(knots)) {
  if (knots_.size() < 2) throw CalibError(ErrorCode::InvalidCurve, "need at least 2 knots");
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!std::isfinite(knots_[i].x) || !std::isfinite(knots_[i].y)) {
      throw CalibError(ErrorCode::InvalidCurve, "non-finite knot");
    }
    if (i == 0) continue;
    if (!(knots_[i].x > knots_[i - 1].x)) {
      throw CalibError(ErrorCode::InvalidCurve, "knot inputs must be strictly increasing");
    }
    if (knots_[i].y < knots_[i - 1].y) {
      throw CalibError(ErrorCode::InvalidCurve, "knot outputs must be non-decreasing");
    }
  }
}

double CalibrationCurve::eval(double x) const {
  if (x <= knots_.front().x) return knots_.front().y;
  if (x >= knots_.back().x) return knots_.back().y;
  const auto hi = std::upper_bound(knots_.begin(), knots_.end(), x,
                                   [](double v, const Knot& k) { return v < k.x; });
  const auto lo = hi - 1;
  if (x == lo->x) return lo->y;
  const double t = (x - lo->x) / (hi->x - lo->x);
  return lo->y + t * (hi->y - lo->y);
}

double CalibrationCurve::eval_inverse(double y) const {
  if (y < knots_.front().y) return knots_.front().x;
  if (y > knots_.back().y) return knots_.back().x;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const Knot& a = knots_[i];
    const Knot& b = knots_[i + 1];
    if (y < a.y || y > b.y) continue;
    if (a.y == b.y) {
      throw CalibError(ErrorCode::NotInvertible,
                       "flat segment at output " + format_double(y) + " between inputs " +
                           format_double(a.x) + " and " + format_double(b.x));
    }
    // y on a knot shared with a following flat segment is ambiguous too.
    if (y == b.y && i + 2 < knots_.size() && knots_[i + 2].y == b.y) {
      throw CalibError(ErrorCode::NotInvertible, "flat segment at output " + format_double(y));
    }
    if (y == a.y) return a.x;
    if (y == b.y) return b.x;
    const double t = (y - a.y) / (b.y - a.y);
    return a.x + t * (b.x - a.x);
  }
  return knots_.back().x;
}

CalibrationCurve fit_monotone(Domain domain, std::vector<Knot> points) {
  std::sort(points.begin(), points.end(), [](const Knot& a, const Knot& b) { return a.x < b.x; });

  // Blocks of (x, mean y, weight); duplicate x merge into one block first.
  struct Block {
    double x;
    double y;
    double w;
    std::size_t first_x;  // index into xs of the first member
    std::size_t count_x;
  };
  std::vector<double> xs;
  std::vector<Block> blocks;
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw CalibError(ErrorCode::DegenerateInput, "non-finite point");
    }
    if (!xs.empty() && p.x == xs.back()) {
      auto& b = blocks.back();
      b.y = (b.y * b.w + p.y) / (b.w + 1.0);
      b.w += 1.0;
      continue;
    }
    xs.push_back(p.x);
    blocks.push_back(Block{p.x, p.y, 1.0, xs.size() - 1, 1});
  }
  if (xs.size() < 2) {
    throw CalibError(ErrorCode::DegenerateInput, "need at least 2 distinct x values");
  }

  std::vector<Block> stack;
  for (const auto& b : blocks) {
    stack.push_back(b);
    while (stack.size() >= 2 && stack[stack.size() - 2].y > stack.back().y) {
      Block top = stack.back();
      stack.pop_back();
      Block& under = stack.back();
      const double w = under.w + top.w;
      under.y = (under.y * under.w + top.y * top.w) / w;
      under.w = w;
      under.count_x += top.count_x;
    }
  }

  std::vector<Knot> knots;
  knots.reserve(xs.size());
  for (const auto& b : stack) {
    for (std::size_t i = 0; i < b.count_x; ++i) knots.push_back(Knot{xs[b.first_x + i], b.y});
  }
  return CalibrationCurve(domain, std::move(knots));
}

bool SensorCalibration::complete() const {
  for (int id = 1; id <= 15; ++id) {
    if (!sensors.contains(id)) return false;
  }
  return sensors.size() == 15;
}

const CalibrationCurve& SensorCalibration::at(int sensor_id) const {
  const auto it = sensors.find(sensor_id);
  if (it == sensors.end()) {
    throw CalibError(ErrorCode::BadFile, "no calibration for sensor " + std::to_string(sensor_id));
  }
  return it->second;
}

Calibration default_calibration() {
  return Calibration{
      CalibrationCurve(Domain::DutyToRpm, {{0.0, 0.0}, {1.0, 3600.0}}),
      CalibrationCurve(Domain::RpmToSpeed, {{0.0, 0.0}, {1800.0, 1.3}, {3600.0, 3.4}}),
      {},
  };
}

DutyForSpeed speed_to_duty(const Calibration& calib, double speed_mps) {
  DutyForSpeed out;
  if (std::isnan(speed_mps)) {
    out.clamped = true;
    return out;
  }
  const auto& rs = calib.rpm_speed;
  double v = speed_mps;
  if (v < rs.y_min() || v > rs.y_max()) out.clamped = true;
  v = std::clamp(v, rs.y_min(), rs.y_max());
  double rpm = rs.eval_inverse(v);
  const auto& dr = calib.duty_rpm;
  if (rpm < dr.y_min() || rpm > dr.y_max()) out.clamped = true;
  rpm = std::clamp(rpm, dr.y_min(), dr.y_max());
  double duty = dr.eval_inverse(rpm);
  if (duty < 0.0 || duty > 1.0) out.clamped = true;
  out.duty = std::clamp(duty, 0.0, 1.0);
  return out;
}

namespace {

void append_curve(std::ostringstream& out, const CalibrationCurve& curve, std::string_view name) {
  for (const auto& k : curve.knots()) {
    out << name << ',' << format_double(k.x) << ',' << format_double(k.y) << '\n';
  }
}

}  // namespace

std::string curve_to_csv(const CalibrationCurve& curve, int sensor_id) {
  std::ostringstream out;
  out << "# " << kHeader << '\n' << "domain,x,y\n";
  std::string name(to_string(curve.domain()));
  if (curve.domain() == Domain::RawToSpeed) name += ":" + std::to_string(sensor_id);
  append_curve(out, curve, name);
  return out.str();
}

std::string to_csv(const Calibration& calib) {
  std::ostringstream out;
  out << "# " << kHeader << '\n' << "domain,x,y\n";
  append_curve(out, calib.duty_rpm, "duty_rpm");
  append_curve(out, calib.rpm_speed, "rpm_speed");
  for (const auto& [id, curve] : calib.sensors.sensors) {
    append_curve(out, curve, "sensor:" + std::to_string(id));
  }
  return out.str();
}

Calibration parse_csv(std::string_view text) {
  CsvReader reader{std::string(text)};
  std::vector<std::string_view> fields;
  std::map<std::string, std::vector<Knot>> curves;
  bool header_row = false;
  while (reader.next(fields)) {
    if (!header_row) {
      if (fields.size() != 3 || fields[0] != "domain" || fields[1] != "x" || fields[2] != "y") {
        throw DataError("expected column header 'domain,x,y'", reader.line());
      }
      header_row = true;
      continue;
    }
    if (fields.size() != 3) throw DataError("expected 3 columns", reader.line());
    const std::string domain(fields[0]);
    if (domain != "duty_rpm" && domain != "rpm_speed" && domain.rfind("sensor:", 0) != 0) {
      throw DataError("unknown domain '" + domain + "'", reader.line());
    }
    curves[domain].push_back(Knot{parse_double(fields[1], reader.line()),
                                  parse_double(fields[2], reader.line())});
  }
  const auto& comments = reader.comments();
  if (comments.empty() || comments.front() != kHeader) {
    throw CalibError(ErrorCode::BadFile, "missing '# gustwall-calib v1' header");
  }

  Calibration calib = default_calibration();
  for (auto& [domain, knots] : curves) {
    try {
      if (domain == "duty_rpm") {
        calib.duty_rpm = CalibrationCurve(Domain::DutyToRpm, std::move(knots));
      } else if (domain == "rpm_speed") {
        calib.rpm_speed = CalibrationCurve(Domain::RpmToSpeed, std::move(knots));
      } else {
        const auto id = parse_int(std::string_view(domain).substr(7), 0);
        if (id < 1 || id > 15) throw DataError("sensor id outside 1..15 in '" + domain + "'");
        calib.sensors.sensors.insert_or_assign(static_cast<int>(id),
                                               CalibrationCurve(Domain::RawToSpeed, std::move(knots)));
      }
    } catch (const CalibError& e) {
      throw CalibError(ErrorCode::BadFile, "curve '" + domain + "': " + e.what());
    }
  }
  return calib;
}

Calibration load(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

std::string calibration_hash(const Calibration& calib) { return hex64(fnv1a64(to_csv(calib))); }

}  // namespace gustwall::calib
