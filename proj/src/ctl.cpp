#include "gustwall/ctl.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gustwall/manifest.hpp"
#include "gustwall/util.hpp"
#include "gustwall/version.hpp"
#include "json.hpp"

namespace gustwall::ctl {

using nlohmann::json;

std::string_view to_string(SyncKind kind) {
  switch (kind) {
    case SyncKind::Start: return "start";
    case SyncKind::Edge: return "edge";
    case SyncKind::Stop: return "stop";
  }
  return "edge";
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::Pending: return "pending";
    case SessionStatus::Running: return "running";
    case SessionStatus::Completed: return "completed";
    case SessionStatus::Aborted: return "aborted";
    case SessionStatus::Failed: return "failed";
    case SessionStatus::Degraded: return "degraded";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

std::uint64_t TelemetrySnapshot::lost_total() const {
  std::uint64_t total = 0;
  for (const auto& m : modules) total += m.lost;
  return total;
}

std::bitset<kModules> TelemetrySnapshot::stale(std::int64_t now_us, std::int64_t max_age_us) const {
  std::bitset<kModules> out;
  for (int m = 0; m < kModules; ++m) {
    const auto& rx = modules[m].last_rx_us;
    if (!rx || now_us - *rx > max_age_us) out.set(static_cast<std::size_t>(m));
  }
  return out;
}

void TelemetryStore::ingest(std::span<const std::uint8_t> datagram, std::int64_t rx_us) {
  const auto decoded = proto::decode_frame(datagram);
  std::lock_guard lock(mu_);
  const auto* frame = std::get_if<proto::Frame>(&decoded);
  if (!frame) {
    ++state_.malformed;
    return;
  }
  if (frame->type == proto::MsgType::Pong) {
    state_.ponged.set(frame->module_index);
    return;
  }
  if (frame->type != proto::MsgType::TachReport) {
    ++state_.malformed;
    return;
  }
  auto& mod = state_.modules[frame->module_index];
  if (mod.received > 0) {
    const std::uint32_t gap = proto::seq_gap(mod.last_seq, frame->seq);
    if (gap >= 0x80000000u) {
      // Duplicate or older than what we hold; keep the newer state.
      ++mod.reordered;
      return;
    }
    mod.lost += gap;
  }
  const auto& rpms = std::get<proto::TachPayload>(frame->payload).rpms;
  for (int f = 0; f < kFansPerModule; ++f) mod.rpm[f] = rpms[f];
  mod.last_seq = frame->seq;
  mod.last_rx_us = rx_us;
  ++mod.received;
}

TelemetrySnapshot TelemetryStore::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

void TelemetryStore::clear_pongs() {
  std::lock_guard lock(mu_);
  state_.ponged.reset();
}

// ---------------------------------------------------------------------------

double PiState::update(double feedforward, double error_rpm, double dt) {
  const double i_limit = gains.ki > 0 ? 1.0 / gains.ki : 0.0;
  const double candidate = std::clamp(integral + error_rpm * dt, -i_limit, i_limit);
  const double raw = feedforward + gains.kp * error_rpm + gains.ki * candidate;
  // Clamped integration: freeze the integrator while the output is pinned and
  // the error would push it further out.
  saturated = (raw > 1.0 && error_rpm > 0) || (raw < 0.0 && error_rpm < 0);
  if (!saturated) integral = candidate;
  const double u = feedforward + gains.kp * error_rpm + gains.ki * integral;
  return std::clamp(u, 0.0, 1.0);
}

Regulator::Regulator(const calib::Calibration& calib, PiGains gains, bool closed_loop, double command_period_s,
                     double telemetry_period_s)
    : duty_rpm_(calib.duty_rpm),
      closed_loop_(closed_loop),
      dt_(command_period_s),
      stale_after_us_(std::llround(3.0 * telemetry_period_s * 1e6)) {
  for (auto& pi : pi_) pi.gains = gains;
}

TickResult Regulator::tick(const Schedule& schedule, double t, const TelemetrySnapshot& telemetry,
                           std::int64_t now_us) {
  TickResult out;
  out.level = schedule.level_at(t);
  const FanArray ff = schedule.duties_at(t);
  out.stale = telemetry.stale(now_us, stale_after_us_);

  if (out.level != previous_level_) {
    out.sync = SyncEvent{now_us, previous_level_, out.level, schedule.phase_at(t),
                         first_tick_ ? SyncKind::Start : SyncKind::Edge};
  }
  previous_level_ = out.level;
  first_tick_ = false;

  for (int i = 0; i < kFans; ++i) {
    out.target_rpm[i] = duty_rpm_.eval(ff[i]);
    if (!closed_loop_ || ff[i] <= 0.0) {
      out.duty[i] = ff[i];
      if (ff[i] <= 0.0) pi_[i].reset();
      continue;
    }
    const int m = i / kFansPerModule;
    if (out.stale.test(static_cast<std::size_t>(m))) {
      out.duty[i] = ff[i];
      continue;
    }
    const double measured = telemetry.modules[m].rpm[i % kFansPerModule];
    out.duty[i] = pi_[i].update(ff[i], out.target_rpm[i] - measured, dt_);
  }
  return out;
}

// ---------------------------------------------------------------------------

void zero_wall(FrameSink& sink, std::array<std::uint32_t, kModules>& seq, std::int64_t now_us) {
  const std::array<std::uint16_t, kFansPerModule> zeros{};
  for (int pass = 0; pass < 2; ++pass) {
    for (int m = 0; m < kModules; ++m) {
      const auto frame = proto::make_set_pwm(static_cast<std::uint8_t>(m), seq[m]++,
                                             static_cast<std::uint64_t>(std::max<std::int64_t>(now_us, 0)), zeros);
      sink.send(m, proto::encode_frame(frame));
    }
  }
}

namespace {

double session_duration(const Schedule& schedule, const SessionOptions& options) {
  return options.duration_s > 0 ? options.duration_s : schedule.duration();
}

}  // namespace

Session::Session(Schedule schedule, const calib::Calibration& calib, SessionOptions options, FrameSink& sink)
    : schedule_(std::move(schedule)),
      options_(options),
      sink_(sink),
      regulator_(calib, options.gains, options.closed_loop, 1.0 / options.command_rate_hz,
                 1.0 / options.telemetry_rate_hz) {
  if (!(options_.command_rate_hz > 0) || !(options_.telemetry_rate_hz > 0)) {
    throw ControlError(ErrorCode::InvalidProfile, "rates must be > 0");
  }
  const double duration = session_duration(schedule_, options_);
  if (!(duration > 0) || !std::isfinite(duration)) {
    throw ControlError(ErrorCode::InvalidProfile, "session duration must be > 0");
  }
  ticks_ = std::llround(duration * options_.command_rate_hz);
  result_.status = SessionStatus::Running;
}

Session::~Session() {
  if (stopped_) return;
  try {
    zero_wall(sink_, seq_, 0);
  } catch (...) {
  }
}

std::int64_t Session::tick_time_us(std::int64_t k) const {
  return std::llround(static_cast<double>(k) * 1e6 / options_.command_rate_hz);
}

void Session::send_duties(const FanArray& duty, std::int64_t now_us) {
  for (int m = 0; m < kModules; ++m) {
    std::array<std::uint16_t, kFansPerModule> wire{};
    for (int f = 0; f < kFansPerModule; ++f) wire[f] = proto::duty_to_wire(duty[m * kFansPerModule + f]);
    const auto frame = proto::make_set_pwm(static_cast<std::uint8_t>(m), seq_[m]++,
                                           static_cast<std::uint64_t>(std::max<std::int64_t>(now_us, 0)), wire);
    sink_.send(m, proto::encode_frame(frame));
  }
}

namespace {

TelemetryRecord make_record(std::int64_t now_us, const TelemetrySnapshot& telemetry) {
  TelemetryRecord rec;
  rec.timestamp_us = now_us;
  for (int i = 0; i < kFans; ++i) {
    rec.measured_rpm[i] = telemetry.modules[i / kFansPerModule].rpm[i % kFansPerModule];
  }
  rec.lost_frames = telemetry.lost_total();
  return rec;
}

}  // namespace

const TelemetryRecord& Session::step(const TelemetrySnapshot& telemetry, std::int64_t now_us) {
  if (stopped_ || done_ticking()) throw std::logic_error("session has no ticks left");
  const double t = static_cast<double>(tick_time_us(next_)) * 1e-6;
  TickResult tick = regulator_.tick(schedule_, t, telemetry, now_us);
  send_duties(tick.duty, now_us);

  TelemetryRecord rec = make_record(now_us, telemetry);
  rec.phase = schedule_.phase_at(t);
  rec.sync = tick.sync.has_value();
  rec.duty = tick.duty;
  rec.target_rpm = tick.target_rpm;
  rec.stale_modules = static_cast<int>(tick.stale.count());
  if (tick.sync) result_.events.push_back(*tick.sync);
  result_.records.push_back(rec);
  ++next_;
  return result_.records.back();
}

void Session::stop(SessionStatus status, const TelemetrySnapshot& telemetry, std::int64_t now_us,
                   std::string message) {
  if (stopped_) return;
  zero_wall(sink_, seq_, now_us);
  stopped_ = true;

  TelemetryRecord rec = make_record(now_us, telemetry);
  const double t = static_cast<double>(tick_time_us(next_)) * 1e-6;
  rec.phase = schedule_.phase_at(t);
  if (regulator_.previous_level() != 0.0) {
    result_.events.push_back(SyncEvent{now_us, regulator_.previous_level(), 0.0, rec.phase, SyncKind::Stop});
    rec.sync = true;
  }
  const auto stale_after = std::llround(3e6 / options_.telemetry_rate_hz);
  result_.silent_modules = telemetry.stale(now_us, stale_after);
  rec.stale_modules = static_cast<int>(result_.silent_modules.count());
  if (!result_.records.empty()) rec.timestamp_us = std::max(rec.timestamp_us, result_.records.back().timestamp_us);
  result_.records.push_back(rec);

  result_.status = status;
  result_.message = std::move(message);
  result_.lost_frames = telemetry.lost_total();
  result_.malformed = telemetry.malformed;
}

// ---------------------------------------------------------------------------
// Run directory

namespace {

constexpr std::string_view kTelemetryHeader = "gustwall-telemetry v1";
constexpr std::string_view kEventsHeader = "gustwall-events v1";

}  // namespace

std::string telemetry_csv(const std::vector<TelemetryRecord>& records) {
  std::ostringstream out;
  out << "# " << kTelemetryHeader << '\n';
  out << "timestamp_us,phase,sync,lost_frames,stale_modules";
  for (const char* prefix : {"duty_", "target_rpm_", "rpm_"}) {
    for (int i = 0; i < kFans; ++i) out << ',' << prefix << i;
  }
  out << '\n';
  for (const auto& r : records) {
    out << r.timestamp_us << ',' << format_double(r.phase) << ',' << (r.sync ? 1 : 0) << ',' << r.lost_frames
        << ',' << r.stale_modules;
    for (double v : r.duty) out << ',' << format_double(v);
    for (double v : r.target_rpm) out << ',' << format_double(v);
    for (double v : r.measured_rpm) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

std::string events_csv(const std::vector<SyncEvent>& events) {
  std::ostringstream out;
  out << "# " << kEventsHeader << '\n' << "timestamp_us,kind,old_duty,new_duty,phase\n";
  for (const auto& e : events) {
    out << e.timestamp_us << ',' << to_string(e.kind) << ',' << format_double(e.old_duty) << ','
        << format_double(e.new_duty) << ',' << format_double(e.phase) << '\n';
  }
  return out.str();
}

std::vector<SyncEvent> parse_events_csv(std::string_view text) {
  CsvReader reader{std::string(text)};
  std::vector<std::string_view> f;
  std::vector<SyncEvent> events;
  bool header = false;
  while (reader.next(f)) {
    if (!header) {
      if (f.size() != 5 || f[0] != "timestamp_us" || f[1] != "kind") {
        throw DataError("expected events header 'timestamp_us,kind,old_duty,new_duty,phase'", reader.line());
      }
      header = true;
      continue;
    }
    if (f.size() != 5) throw DataError("expected 5 columns", reader.line());
    SyncEvent e;
    e.timestamp_us = parse_int(f[0], reader.line());
    if (f[1] == "start") {
      e.kind = SyncKind::Start;
    } else if (f[1] == "edge") {
      e.kind = SyncKind::Edge;
    } else if (f[1] == "stop") {
      e.kind = SyncKind::Stop;
    } else {
      throw DataError("unknown event kind '" + std::string(f[1]) + "'", reader.line());
    }
    e.old_duty = parse_double(f[2], reader.line());
    e.new_duty = parse_double(f[3], reader.line());
    e.phase = parse_double(f[4], reader.line());
    if (!events.empty() && e.timestamp_us < events.back().timestamp_us) {
      throw DataError("event timestamps must be non-decreasing", reader.line());
    }
    events.push_back(e);
  }
  if (!header) throw DataError("events file has no header row");
  return events;
}

std::string config_hash(const Schedule& schedule, const SessionOptions& options) {
  std::ostringstream s;
  s << profile_to_json(schedule.profile()) << '|' << format_double(session_duration(schedule, options)) << '|'
    << format_double(options.command_rate_hz) << '|' << format_double(options.telemetry_rate_hz) << '|'
    << options.closed_loop << '|' << format_double(options.gains.kp) << '|' << format_double(options.gains.ki)
    << '|' << options.seed;
  return hex64(fnv1a64(s.str()));
}

std::filesystem::path write_run_directory(const std::filesystem::path& parent, const Schedule& schedule,
                                          const SessionOptions& options, const SessionResult& result,
                                          const RunInfo& info) {
  namespace fs = std::filesystem;
  fs::create_directories(parent);
  const std::string chash = config_hash(schedule, options);
  const std::string stamp = utc_stamp();
  fs::path dir;
  for (int attempt = 0;; ++attempt) {
    const auto tag = hex64(fnv1a64(chash + stamp + info.started_utc + std::to_string(attempt))).substr(0, 8);
    dir = parent / (stamp + "-" + tag);
    if (fs::create_directory(dir)) break;
    if (attempt > 1000) throw Error(Error::Category::Internal, "cannot create run directory in " + parent.string());
  }

  write_file_atomic(dir / "telemetry.csv", telemetry_csv(result.records));
  write_file_atomic(dir / "events.csv", events_csv(result.events));

  // Segments as run, clipped to the session length.
  const double run_s = session_duration(schedule, options);
  json segments = json::array();
  for (const auto& seg : schedule.segments()) {
    if (seg.start_s >= run_s) break;
    segments.push_back(
        {{"start_s", seg.start_s}, {"end_s", std::min(seg.end_s, run_s)}, {"target", seg.target}, {"duty", seg.duty}});
  }
  std::vector<int> silent;
  for (int m = 0; m < kModules; ++m) {
    if (result.silent_modules.test(static_cast<std::size_t>(m))) silent.push_back(m);
  }
  json manifest = {
      {"format", "gustwall-run v1"},
      {"tool", "gustwall"},
      {"version", kVersion},
      {"subcommand", info.subcommand},
      {"status", std::string(to_string(result.status))},
      {"message", result.message},
      {"config_hash", chash},
      {"calib_hash", info.calib_hash},
      {"seed", options.seed},
      {"started_utc", info.started_utc},
      {"finished_utc", info.finished_utc.empty() ? utc_iso8601() : info.finished_utc},
      {"duration_s", run_s},
      {"command_rate_hz", options.command_rate_hz},
      {"telemetry_rate_hz", options.telemetry_rate_hz},
      {"closed_loop", options.closed_loop},
      {"gains", {{"kp", options.gains.kp}, {"ki", options.gains.ki}}},
      {"profile", json::parse(profile_to_json(schedule.profile()))},
      {"segments", segments},
      {"counts",
       {{"telemetry_rows", result.records.size()},
        {"events", result.events.size()},
        {"lost_frames", result.lost_frames},
        {"malformed", result.malformed}}},
      {"silent_modules", silent},
  };
  json outputs = json::array();
  for (const char* name : {"telemetry.csv", "events.csv"}) {
    outputs.push_back({{"path", name}, {"fnv1a64", file_hash(dir / name)}});
  }
  manifest["outputs"] = outputs;
  json inputs = json::array();
  for (const auto& p : info.inputs) inputs.push_back({{"path", p}, {"fnv1a64", file_hash(p)}});
  manifest["inputs"] = inputs;
  const json extra = json::parse(info.extra_json);
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return dir;
}

}  // namespace gustwall::ctl
