#include <algorithm>
#include <cmath>
#include <numbers>

#include "gustwall/ctl.hpp"
#include "gustwall/util.hpp"
#include "json.hpp"

namespace gustwall::ctl {

using nlohmann::json;

namespace {

std::string code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::AbortRequested: return "AbortRequested";
    case ErrorCode::Busy: return "Busy";
  }
  return "ControlError";
}

Error::Category category_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EndpointUnreachable: return Error::Category::Network;
    case ErrorCode::AbortRequested:
    case ErrorCode::Busy: return Error::Category::Internal;
    default: return Error::Category::InputData;
  }
}

[[noreturn]] void invalid(const std::string& what) { throw ControlError(ErrorCode::InvalidProfile, what); }

double frac(double v) { return v - std::floor(v); }

}  // namespace

ControlError::ControlError(ErrorCode code, const std::string& detail)
    : Error(category_for(code), code_name(code) + ": " + detail), code_(code) {}

std::string_view to_string(ProfileKind kind) {
  switch (kind) {
    case ProfileKind::Steady: return "steady";
    case ProfileKind::Square: return "square";
    case ProfileKind::Sine: return "sine";
    case ProfileKind::Piecewise: return "piecewise";
  }
  return "unknown";
}

std::string_view to_string(Unit unit) { return unit == Unit::Speed ? "speed" : "duty"; }

void GustProfile::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(lo) || !finite(hi) || !finite(frequency_hz) || !finite(duration_s)) invalid("non-finite field");
  if (duration_s < 0) invalid("duration must be >= 0");
  if (lo < 0) invalid("lo must be >= 0");
  if (lo > hi) invalid("lo must be <= hi");
  if ((kind == ProfileKind::Square || kind == ProfileKind::Sine) && !(frequency_hz > 0)) {
    invalid("frequency must be > 0 for periodic profiles");
  }
  if (kind == ProfileKind::Piecewise) {
    if (steps.empty()) invalid("piecewise profile needs at least one step");
    for (const auto& s : steps) {
      if (!(s.duration_s > 0) || !finite(s.duration_s)) invalid("step durations must be > 0");
      if (!finite(s.target) || s.target < 0) invalid("step targets must be >= 0");
    }
  }
  if (unit == Unit::Duty) {
    if (hi > 1.0) invalid("duty levels must lie in [0, 1]");
    for (const auto& s : steps) {
      if (s.target > 1.0) invalid("duty levels must lie in [0, 1]");
    }
  }
  for (int i : mask) {
    if (i < 0 || i >= kFans) invalid("mask index " + std::to_string(i) + " outside 0..134");
  }
}

double GustProfile::effective_duration() const {
  if (duration_s > 0) return duration_s;
  if (kind == ProfileKind::Piecewise) {
    double total = 0.0;
    for (const auto& s : steps) total += s.duration_s;
    return total;
  }
  return 0.0;
}

GustProfile parse_profile(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    invalid(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) invalid("profile must be a JSON object");

  static const std::vector<std::string> known = {"kind", "unit", "lo", "hi", "level", "frequency",
                                                 "steps", "duration", "mask", "name"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) invalid("unknown field '" + key + "'");
  }

  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) invalid(std::string("'") + key + "' must be a number");
    return j[key].get<double>();
  };

  GustProfile p;
  if (!j.contains("kind") || !j["kind"].is_string()) invalid("missing 'kind'");
  const auto kind = j["kind"].get<std::string>();
  if (kind == "steady") {
    p.kind = ProfileKind::Steady;
  } else if (kind == "square") {
    p.kind = ProfileKind::Square;
  } else if (kind == "sine") {
    p.kind = ProfileKind::Sine;
  } else if (kind == "piecewise") {
    p.kind = ProfileKind::Piecewise;
  } else {
    invalid("unknown kind '" + kind + "'");
  }

  const auto unit = j.value("unit", std::string("speed"));
  if (unit == "speed") {
    p.unit = Unit::Speed;
  } else if (unit == "duty") {
    p.unit = Unit::Duty;
  } else {
    invalid("unit must be 'speed' or 'duty'");
  }

  if (p.kind == ProfileKind::Steady) {
    if (!j.contains("level") && !j.contains("hi")) invalid("steady profile needs 'level'");
    const double level = number("level", number("hi", 0.0));
    p.lo = p.hi = level;
  } else if (p.kind != ProfileKind::Piecewise) {
    if (!j.contains("lo") || !j.contains("hi")) invalid("periodic profile needs 'lo' and 'hi'");
    p.lo = number("lo", 0.0);
    p.hi = number("hi", 0.0);
    p.frequency_hz = number("frequency", 0.0);
  }
  p.duration_s = number("duration", 0.0);

  if (j.contains("steps")) {
    if (!j["steps"].is_array()) invalid("'steps' must be an array");
    for (const auto& s : j["steps"]) {
      if (s.is_array() && s.size() == 2 && s[0].is_number() && s[1].is_number()) {
        p.steps.push_back({s[0].get<double>(), s[1].get<double>()});
      } else if (s.is_object() && s.contains("duration") && s.contains("target")) {
        p.steps.push_back({s["duration"].get<double>(), s["target"].get<double>()});
      } else {
        invalid("each step is [duration, target] or {duration, target}");
      }
    }
  }
  if (p.kind == ProfileKind::Piecewise && !p.steps.empty()) {
    p.lo = p.steps.front().target;
    p.hi = p.steps.front().target;
    for (const auto& s : p.steps) {
      p.lo = std::min(p.lo, s.target);
      p.hi = std::max(p.hi, s.target);
    }
  }
  if (j.contains("mask")) {
    if (!j["mask"].is_array()) invalid("'mask' must be an array of fan indices");
    for (const auto& m : j["mask"]) {
      if (!m.is_number_integer()) invalid("'mask' entries must be integers");
      p.mask.push_back(m.get<int>());
    }
  }
  p.validate();
  return p;
}

GustProfile load_profile(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(Error::Category::Usage, "profile file not found: " + path.string());
  }
  return parse_profile(read_file(path));
}

std::string profile_to_json(const GustProfile& p) {
  json j;
  j["kind"] = std::string(to_string(p.kind));
  j["unit"] = std::string(to_string(p.unit));
  switch (p.kind) {
    case ProfileKind::Steady:
      j["level"] = p.hi;
      break;
    case ProfileKind::Square:
    case ProfileKind::Sine:
      j["lo"] = p.lo;
      j["hi"] = p.hi;
      j["frequency"] = p.frequency_hz;
      break;
    case ProfileKind::Piecewise: {
      json steps = json::array();
      for (const auto& s : p.steps) steps.push_back({s.duration_s, s.target});
      j["steps"] = steps;
      break;
    }
  }
  if (p.duration_s > 0) j["duration"] = p.duration_s;
  if (!p.mask.empty()) j["mask"] = p.mask;
  return j.dump();
}

Schedule compile_profile(const GustProfile& profile, const calib::Calibration& calib) {
  profile.validate();
  Schedule s;
  s.profile_ = profile;
  s.calib_ = calib;
  s.duration_ = profile.effective_duration();
  if (!(s.duration_ > 0)) invalid("profile has no duration; pass one explicitly");

  if (profile.mask.empty()) {
    s.mask_.set();
  } else {
    for (int i : profile.mask) s.mask_.set(static_cast<std::size_t>(i));
  }

  auto to_duty = [&](double target) {
    if (profile.unit == Unit::Duty) return target;
    const double max_speed = calib.max_speed();
    if (target > max_speed + 1e-12) {
      throw ControlError(ErrorCode::RangeError, "speed " + format_double(target) +
                                                    " m/s exceeds calibrated maximum " +
                                                    format_double(max_speed) + " m/s");
    }
    return calib::speed_to_duty(calib, target).duty;
  };

  s.lo_duty_ = to_duty(profile.lo);
  s.hi_duty_ = to_duty(profile.hi);
  if (profile.kind == ProfileKind::Piecewise) {
    double t = 0.0;
    for (const auto& step : profile.steps) {
      if (t >= s.duration_) break;
      s.segments_.push_back({t, std::min(t + step.duration_s, s.duration_), step.target, to_duty(step.target)});
      t += step.duration_s;
    }
    if (t < s.duration_) s.segments_.back().end_s = s.duration_;
  } else {
    s.segments_.push_back({0.0, s.duration_, profile.hi, s.hi_duty_});
  }
  return s;
}

double Schedule::level_at(double t) const {
  switch (profile_.kind) {
    case ProfileKind::Steady:
      return hi_duty_;
    case ProfileKind::Square:
      // Starts at lo; switches to hi at each half period.
      return frac(t * profile_.frequency_hz) < 0.5 ? lo_duty_ : hi_duty_;
    case ProfileKind::Sine: {
      const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * profile_.frequency_hz * t));
      const double target = profile_.lo + (profile_.hi - profile_.lo) * w;
      if (profile_.unit == Unit::Duty) return target;
      return calib::speed_to_duty(calib_, target).duty;
    }
    case ProfileKind::Piecewise:
      for (const auto& seg : segments_) {
        if (t < seg.end_s) return seg.duty;
      }
      return segments_.back().duty;
  }
  return 0.0;
}

FanArray Schedule::duties_at(double t) const {
  FanArray out{};
  const double level = level_at(t);
  for (int i = 0; i < kFans; ++i) out[i] = mask_.test(static_cast<std::size_t>(i)) ? level : 0.0;
  return out;
}

double Schedule::phase_at(double t) const {
  if (profile_.kind == ProfileKind::Square || profile_.kind == ProfileKind::Sine) {
    return 2.0 * std::numbers::pi * frac(t * profile_.frequency_hz);
  }
  return 0.0;
}

}  // namespace gustwall::ctl
