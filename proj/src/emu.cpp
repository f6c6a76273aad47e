#include "gustwall/emu.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gustwall/util.hpp"

namespace gustwall::emu {

namespace {

std::string emu_code_name(EmuError::Code code) {
  switch (code) {
    case EmuError::Code::OutOfBounds: return "OutOfBounds";
    case EmuError::Code::BadConfig: return "BadConfig";
  }
  return "EmuError";
}

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

double raised_cosine(double distance, double band) {
  if (distance >= band) return 1.0;
  if (distance <= 0.0) return 0.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * distance / band));
}

}  // namespace

EmuError::EmuError(Code code, const std::string& detail)
    : Error(code == Code::BadConfig ? Category::InputData : Category::Usage,
            emu_code_name(code) + ": " + detail),
      code_(code) {}

FanState step_fan(const FanState& state, double commanded_duty, double dt,
                  const calib::CalibrationCurve& duty_rpm, double gain) {
  FanState next = state;
  next.duty = std::clamp(commanded_duty, 0.0, 1.0);
  if (!(dt > 0.0)) return next;
  const double target = std::clamp(gain * duty_rpm.eval(next.duty), 0.0, kMaxRpm);
  next.rpm = state.rpm + (target - state.rpm) * -std::expm1(-dt / state.tau);
  next.rpm = std::clamp(next.rpm, 0.0, kMaxRpm);
  return next;
}

int tach_read(const FanState& state, std::mt19937_64& rng) {
  if (state.rpm < 0.5) return 0;
  std::uniform_int_distribution<int> jitter(-1, 1);
  const long rounded = std::lround(state.rpm);
  return static_cast<int>(std::clamp<long>(rounded + jitter(rng), 0, proto::kMaxTachRpm));
}

bool ArrayGeometry::contains(Point p) const {
  return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
}

Point ArrayGeometry::fan_center(int global_index) const {
  const int fans_per_module = fans_per_side * fans_per_side;
  const int module = global_index / fans_per_module;
  const int fan = global_index % fans_per_module;
  const int col = (module % module_columns) * fans_per_side + fan % fans_per_side;
  const int row = (module / module_columns) * fans_per_side + fan / fans_per_side;
  return {(col + 0.5) * width / fan_columns(), (row + 0.5) * height / fan_rows()};
}

void PlumeModel::validate() const {
  auto bad = [](const std::string& what) { throw EmuError(EmuError::Code::BadConfig, what); };
  if (!(kernel_sigma_m > 0)) bad("plume.kernel_sigma_m must be > 0");
  if (!(taper_m > 0)) bad("plume.taper_m must be > 0");
  if (!(ti_core > 0) || !(ti_core <= ti_boundary)) bad("need 0 < plume.ti_core <= plume.ti_boundary");
  if (!(ti_core_radius >= 0) || !(ti_edge_radius > ti_core_radius)) {
    bad("need 0 <= plume.ti_core_radius < plume.ti_edge_radius");
  }
  if (!(noise_cutoff_hz > 0)) bad("plume.noise_cutoff_hz must be > 0");
  if (transport_delay_s < 0) bad("plume.transport_delay_s must be >= 0");
  if (!(delay_floor_s >= 0) || !(delay_max_s >= delay_floor_s)) bad("need 0 <= delay_floor_s <= delay_max_s");
}

PlumeField::PlumeField(ArrayGeometry geometry, PlumeModel model, calib::Calibration calibration)
    : geometry_(geometry), model_(model), calib_(std::move(calibration)) {
  model_.validate();
}

void PlumeField::require_inside(Point p) const {
  if (!geometry_.contains(p)) {
    throw EmuError(EmuError::Code::OutOfBounds, "point (" + format_double(p.x) + ", " +
                                                     format_double(p.y) + ") outside the array rectangle");
  }
}

double PlumeField::envelope(Point p) const {
  require_inside(p);
  const double dx = std::min(p.x, geometry_.width - p.x);
  const double dy = std::min(p.y, geometry_.height - p.y);
  return raised_cosine(dx, model_.taper_m) * raised_cosine(dy, model_.taper_m);
}

double PlumeField::ti_at(Point p) const {
  require_inside(p);
  const double rx = std::abs(p.x - geometry_.width / 2.0) / (geometry_.width / 2.0);
  const double ry = std::abs(p.y - geometry_.height / 2.0) / (geometry_.height / 2.0);
  const double r = std::max(rx, ry);
  const double s = smoothstep((r - model_.ti_core_radius) / (model_.ti_edge_radius - model_.ti_core_radius));
  return model_.ti_core + (model_.ti_boundary - model_.ti_core) * s;
}

std::vector<double> PlumeField::kernel_weights(Point p) const {
  require_inside(p);
  const int n = geometry_.fan_columns() * geometry_.fan_rows();
  std::vector<double> w(n);
  const double inv = 1.0 / (2.0 * model_.kernel_sigma_m * model_.kernel_sigma_m);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Point c = geometry_.fan_center(i);
    const double d2 = (c.x - p.x) * (c.x - p.x) + (c.y - p.y) * (c.y - p.y);
    w[i] = std::exp(-d2 * inv);
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

double PlumeField::centerline_speed(std::span<const double> fan_rpm) const {
  double mean = 0.0;
  for (double r : fan_rpm) mean += r;
  mean /= static_cast<double>(fan_rpm.size());
  return calib_.rpm_speed.eval(mean);
}

double PlumeField::transport_delay(double centerline_speed_mps) const {
  if (model_.transport_delay_s > 0.0) return model_.transport_delay_s;
  if (!(centerline_speed_mps > 0.0)) return model_.delay_max_s;
  return std::clamp(model_.plane_distance_m / centerline_speed_mps, model_.delay_floor_s, model_.delay_max_s);
}

VirtualSensor::VirtualSensor(const PlumeField& field, Point position, double sample_rate_hz,
                             std::uint64_t seed)
    : field_(&field),
      position_(position),
      rate_(sample_rate_hz),
      envelope_(field.envelope(position)),
      ti_(field.ti_at(position)),
      weights_(field.kernel_weights(position)),
      rng_(seed) {
  if (!(sample_rate_hz > 0)) throw EmuError(EmuError::Code::BadConfig, "probe sample rate must be > 0");
  // Two cascaded one-pole low-pass sections at the noise cutoff, scaled to
  // unit variance: sum h_k^2 = (1-a)^4 (1+a^2) / (1-a^2)^3.
  pole_ = std::exp(-2.0 * std::numbers::pi * field.model().noise_cutoff_hz / rate_);
  const double a = pole_;
  const double gain2 = std::pow(1.0 - a, 4) * (1.0 + a * a) / std::pow(1.0 - a * a, 3);
  noise_scale_ = 1.0 / std::sqrt(gain2);
  const int burn_in = static_cast<int>(std::ceil(20.0 / (1.0 - a)));
  for (int i = 0; i < burn_in; ++i) unit_noise();
}

double VirtualSensor::unit_noise() {
  const double w = normal_(rng_);
  stage1_ = pole_ * stage1_ + (1.0 - pole_) * w;
  stage2_ = pole_ * stage2_ + (1.0 - pole_) * stage1_;
  return stage2_ * noise_scale_;
}

double VirtualSensor::local_rpm(std::span<const double> fan_rpm) const {
  double acc = 0.0;
  const std::size_t n = std::min(fan_rpm.size(), weights_.size());
  for (std::size_t i = 0; i < n; ++i) acc += weights_[i] * fan_rpm[i];
  return acc;
}

double VirtualSensor::steady_speed(std::span<const double> fan_rpm) const {
  return field_->calibration().rpm_speed.eval(local_rpm(fan_rpm)) * envelope_;
}

double VirtualSensor::sample(std::span<const double> fan_rpm, double t) {
  history_.emplace_back(t, local_rpm(fan_rpm));
  const double keep = field_->model().delay_max_s + 2.0 / rate_;
  while (history_.size() > 2 && history_[1].first < t - keep) history_.pop_front();

  const double delay = field_->transport_delay(field_->centerline_speed(fan_rpm));
  const double source_t = std::max(last_source_t_, t - delay);
  last_source_t_ = source_t;

  double rpm = history_.front().second;
  if (source_t >= history_.back().first) {
    rpm = history_.back().second;
  } else if (source_t > history_.front().first) {
    const auto hi = std::lower_bound(history_.begin(), history_.end(), source_t,
                                     [](const auto& h, double v) { return h.first < v; });
    const auto lo = hi - 1;
    const double u = (source_t - lo->first) / (hi->first - lo->first);
    rpm = lo->second + u * (hi->second - lo->second);
  }

  const double mean = field_->calibration().rpm_speed.eval(rpm) * envelope_;
  const double g = unit_noise();
  return std::max(0.0, mean * (1.0 + ti_ * g));
}

ModuleEndpoint::ModuleEndpoint(int module_index, EndpointConfig config,
                               calib::CalibrationCurve duty_rpm, std::uint64_t seed)
    : module_(module_index),
      config_(config),
      duty_rpm_(std::move(duty_rpm)),
      rng_(seed),
      report_period_us_(static_cast<std::int64_t>(std::llround(1e6 / config.telemetry_rate_hz))),
      next_report_us_(0) {
  if (module_index < 0 || module_index >= proto::kModules) {
    throw EmuError(EmuError::Code::BadConfig, "module index " + std::to_string(module_index));
  }
  if (!(config.tau_s > 0) || !(config.telemetry_rate_hz > 0) || !(config.watchdog_s > 0)) {
    throw EmuError(EmuError::Code::BadConfig, "tau, telemetry rate and watchdog must be > 0");
  }
  std::uniform_real_distribution<double> spread(1.0 - config.gain_spread, 1.0 + config.gain_spread);
  for (int i = 0; i < proto::kFansPerModule; ++i) {
    fans_[i].tau = config.tau_s;
    gains_[i] = config.gain_spread > 0.0 ? spread(rng_) : 1.0;
  }
}

void ModuleEndpoint::step_all(std::int64_t t_us) {
  if (t_us <= now_us_) return;
  const double dt = static_cast<double>(t_us - now_us_) * 1e-6;
  for (int i = 0; i < proto::kFansPerModule; ++i) {
    fans_[i] = step_fan(fans_[i], commanded_[i], dt, duty_rpm_, gains_[i]);
  }
  now_us_ = t_us;
}

void ModuleEndpoint::emit_report(std::int64_t t_us) {
  std::array<std::uint16_t, proto::kFansPerModule> rpms{};
  for (int i = 0; i < proto::kFansPerModule; ++i) {
    rpms[i] = static_cast<std::uint16_t>(tach_read(fans_[i], rng_));
  }
  pending_.push_back(proto::encode_frame(proto::make_tach_report(
      static_cast<std::uint8_t>(module_), telemetry_seq_++, static_cast<std::uint64_t>(t_us), rpms)));
  ++counters_.telemetry_sent;
}

void ModuleEndpoint::integrate_to(std::int64_t t_us) {
  const auto watchdog_us = static_cast<std::int64_t>(std::llround(config_.watchdog_s * 1e6));
  while (true) {
    std::optional<std::int64_t> deadline;
    if (last_command_us_ && !watchdog_tripped_) deadline = *last_command_us_ + watchdog_us;
    if (now_us_ >= t_us && next_report_us_ > t_us && !(deadline && *deadline <= t_us)) break;

    std::int64_t next = std::min(t_us, next_report_us_);
    if (deadline) next = std::min(next, *deadline);
    step_all(next);
    if (deadline && now_us_ >= *deadline) {
      commanded_.fill(0.0);
      watchdog_tripped_ = true;
      ++counters_.watchdog_trips;
    }
    if (now_us_ >= next_report_us_) {
      emit_report(next_report_us_);
      next_report_us_ += report_period_us_;
    }
  }
}

std::optional<proto::Bytes> ModuleEndpoint::handle(std::span<const std::uint8_t> datagram,
                                                   std::int64_t now_us) {
  integrate_to(now_us);
  ++counters_.frames_received;
  const auto decoded = proto::decode_frame(datagram);
  const auto* frame = std::get_if<proto::Frame>(&decoded);
  if (frame == nullptr) {
    ++counters_.malformed;
    return std::nullopt;
  }
  if (frame->module_index != module_) {
    ++counters_.misrouted;
    return std::nullopt;
  }
  switch (frame->type) {
    case proto::MsgType::SetPwm: {
      const auto& p = std::get<proto::SetPwmPayload>(frame->payload);
      for (int i = 0; i < proto::kFansPerModule; ++i) commanded_[i] = proto::duty_from_wire(p.duties[i]);
      last_command_us_ = now_us;
      watchdog_tripped_ = false;
      ++counters_.set_pwm;
      return std::nullopt;
    }
    case proto::MsgType::Ping:
      ++counters_.pings;
      return proto::encode_frame(proto::make_pong(static_cast<std::uint8_t>(module_), frame->seq,
                                                  static_cast<std::uint64_t>(now_us)));
    case proto::MsgType::TachReport:
    case proto::MsgType::Pong:
      // Controller-bound messages; an endpoint ignores them.
      ++counters_.misrouted;
      return std::nullopt;
  }
  return std::nullopt;
}

std::vector<proto::Bytes> ModuleEndpoint::advance(std::int64_t now_us) {
  integrate_to(now_us);
  std::vector<proto::Bytes> out;
  out.swap(pending_);
  return out;
}

std::array<double, proto::kFansPerModule> ModuleEndpoint::duties() const { return commanded_; }

std::array<double, proto::kFansPerModule> ModuleEndpoint::rpms() const {
  std::array<double, proto::kFansPerModule> out{};
  for (int i = 0; i < proto::kFansPerModule; ++i) out[i] = fans_[i].rpm;
  return out;
}

std::uint64_t module_seed(std::uint64_t seed, int module_index) {
  // splitmix64 step keeps per-module streams decorrelated.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(module_index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SimWall::SimWall(EmulatorConfig config, calib::Calibration calibration)
    : config_(std::move(config)), field_(config_.geometry, config_.plume, calibration) {
  endpoints_.reserve(proto::kModules);
  for (int m = 0; m < proto::kModules; ++m) {
    endpoints_.emplace_back(m, config_.endpoint, calibration.duty_rpm, module_seed(config_.seed, m));
  }
  alive_.fill(true);
}

void SimWall::send(int module_index, proto::Bytes datagram) {
  if (module_index < 0 || module_index >= proto::kModules) return;
  inbox_.emplace_back(module_index, std::move(datagram));
}

void SimWall::kill(int module_index) { alive_.at(module_index) = false; }

int SimWall::add_probe(Point position, double sample_rate_hz) {
  const auto seed = module_seed(config_.seed ^ 0x5eed5eedULL, 100 + static_cast<int>(probes_.size()));
  probes_.push_back(Probe{VirtualSensor(field_, position, sample_rate_hz, seed), 0, {}});
  return static_cast<int>(probes_.size()) - 1;
}

void SimWall::integrate_endpoints(std::int64_t t_us, std::vector<proto::Bytes>& out) {
  for (int m = 0; m < proto::kModules; ++m) {
    if (!alive_[m]) continue;
    auto frames = endpoints_[m].advance(t_us);
    for (auto& f : frames) out.push_back(std::move(f));
  }
}

std::vector<proto::Bytes> SimWall::advance_to(std::int64_t now_us) {
  std::vector<proto::Bytes> out;
  for (auto& [module, datagram] : inbox_) {
    if (!alive_[module]) continue;
    if (auto reply = endpoints_[module].handle(datagram, now_us_)) out.push_back(std::move(*reply));
  }
  inbox_.clear();

  auto sample_time = [](const Probe& p) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(p.index) * 1e6 / p.sensor.sample_rate()));
  };
  while (!probes_.empty()) {
    std::int64_t next_t = sample_time(probes_.front());
    for (const auto& p : probes_) next_t = std::min(next_t, sample_time(p));
    if (next_t > now_us) break;
    integrate_endpoints(std::max(next_t, now_us_), out);
    now_us_ = std::max(next_t, now_us_);
    const auto rpms = fan_rpms();
    for (auto& p : probes_) {
      if (sample_time(p) != next_t) continue;
      const double t_s = static_cast<double>(p.index) / p.sensor.sample_rate();
      p.samples.push_back(p.sensor.sample(rpms, t_s));
      ++p.index;
    }
  }
  integrate_endpoints(now_us, out);
  now_us_ = std::max(now_us_, now_us);
  return out;
}

std::array<double, proto::kFans> SimWall::fan_rpms() const {
  std::array<double, proto::kFans> out{};
  for (int m = 0; m < proto::kModules; ++m) {
    const auto r = endpoints_[m].rpms();
    std::copy(r.begin(), r.end(), out.begin() + m * proto::kFansPerModule);
  }
  return out;
}

std::array<double, proto::kFans> SimWall::fan_duties() const {
  std::array<double, proto::kFans> out{};
  for (int m = 0; m < proto::kModules; ++m) {
    const auto d = endpoints_[m].duties();
    std::copy(d.begin(), d.end(), out.begin() + m * proto::kFansPerModule);
  }
  return out;
}

}  // namespace gustwall::emu
