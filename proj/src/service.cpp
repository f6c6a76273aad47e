#include "gustwall/service.hpp"

#include <thread>

#include "gustwall/util.hpp"
#include "json.hpp"

namespace gustwall::service {

using nlohmann::json;

SimBackend::SimBackend(const emu::EmulatorConfig& config, const calib::Calibration& calib) : wall_(config, calib) {
  sink_.wall = &wall_;
}

void SimBackend::poll(std::int64_t now_us) {
  if (now_us < wall_.now_us()) now_us = wall_.now_us();
  for (const auto& d : wall_.advance_to(now_us)) store_.ingest(d, now_us);
}

UdpBackend::UdpBackend(const net::EndpointTable& endpoints) : link_(endpoints, store_) {}

// ---------------------------------------------------------------------------

ControllerService::ControllerService(calib::Calibration calib, std::unique_ptr<WallBackend> backend,
                                     ServiceOptions options)
    : calib_(std::move(calib)), backend_(std::move(backend)), options_(std::move(options)) {}

ControllerService::~ControllerService() {
  std::lock_guard lock(sched_mu_);
  if (session_) {
    try {
      session_->stop(ctl::SessionStatus::Aborted, backend_->snapshot(), session_->tick_time_us(session_->next_tick()),
                     "service shut down");
    } catch (...) {
    }
    session_.reset();
  }
}

bool ControllerService::busy() const {
  std::lock_guard lock(queue_mu_);
  return busy_;
}

StartOutcome ControllerService::request_start(std::string_view profile_json) {
  ctl::Schedule schedule;
  try {
    auto profile = ctl::parse_profile(profile_json);
    if (profile.effective_duration() <= 0) profile.duration_s = options_.max_duration_s;
    schedule = ctl::compile_profile(profile, calib_);
  } catch (const ctl::ControlError& e) {
    return {400, e.what()};
  }
  {
    std::lock_guard lock(queue_mu_);
    if (busy_) return {409, "a profile is already running"};
    busy_ = true;
    queue_.push_back(Command{Command::Kind::Start, schedule});
  }
  std::lock_guard lock(state_mu_);
  state_.status = "running";
  state_.profile = schedule.profile();
  state_.duration_s = schedule.duration();
  state_.tick = 0;
  state_.events = 0;
  state_.message.clear();
  return {200, "started"};
}

bool ControllerService::request_abort() {
  std::lock_guard lock(queue_mu_);
  if (!busy_) return false;
  queue_.push_back(Command{Command::Kind::Abort, std::nullopt});
  return true;
}

void ControllerService::finish(ctl::SessionStatus status, std::int64_t now_us, const std::string& message) {
  backend_->poll(now_us);
  session_->stop(status, backend_->snapshot(), now_us - session_start_us_, message);
  backend_->poll(now_us);
  std::string dir;
  const auto result = session_->take_result();
  if (options_.out_dir) {
    ctl::RunInfo info;
    info.subcommand = "serve";
    info.calib_hash = calib::calibration_hash(calib_);
    info.started_utc = started_utc_;
    info.finished_utc = utc_iso8601();
    try {
      dir = ctl::write_run_directory(*options_.out_dir, session_->schedule(), session_->options(), result, info)
                .string();
    } catch (const std::exception&) {
      // A failed write must not keep the wall running.
      dir.clear();
    }
  }
  {
    std::lock_guard lock(state_mu_);
    state_.status = std::string(ctl::to_string(status));
    state_.message = message;
    state_.events = result.events.size();
    if (!dir.empty()) state_.last_run_dir = dir;
    if (!result.records.empty()) {
      latest_ = result.records.back();
      ++record_seq_;
    }
  }
  session_.reset();
  std::lock_guard lock(queue_mu_);
  busy_ = false;
}

void ControllerService::advance(std::int64_t now_us) {
  std::lock_guard sched(sched_mu_);
  std::deque<Command> commands;
  {
    std::lock_guard lock(queue_mu_);
    commands.swap(queue_);
  }
  backend_->poll(now_us);

  for (auto& cmd : commands) {
    if (cmd.kind == Command::Kind::Start && !session_) {
      ctl::SessionOptions so;
      so.command_rate_hz = options_.command_rate_hz;
      so.telemetry_rate_hz = options_.telemetry_rate_hz;
      so.closed_loop = options_.closed_loop;
      so.gains = options_.gains;
      so.seed = options_.seed;
      session_ = std::make_unique<ctl::Session>(std::move(*cmd.schedule), calib_, so, backend_->sink());
      session_start_us_ = now_us;
      started_utc_ = utc_iso8601();
    } else if (cmd.kind == Command::Kind::Abort && session_) {
      finish(ctl::SessionStatus::Aborted, now_us, "aborted by operator");
    }
  }

  while (session_ && !session_->done_ticking()) {
    const auto due = session_start_us_ + session_->tick_time_us(session_->next_tick());
    if (due > now_us) break;
    backend_->poll(due);
    const auto& rec = session_->step(backend_->snapshot(), due - session_start_us_);
    std::lock_guard lock(state_mu_);
    latest_ = rec;
    ++record_seq_;
  }
  if (session_ && session_->done_ticking()) {
    const auto end = session_start_us_ + session_->tick_time_us(session_->next_tick());
    if (end <= now_us) {
      const auto stale = backend_->snapshot().stale(end, std::llround(3e6 / options_.telemetry_rate_hz));
      if (stale.any()) {
        finish(ctl::SessionStatus::Degraded, end, std::to_string(stale.count()) + " module(s) silent");
      } else {
        finish(ctl::SessionStatus::Completed, end, {});
      }
    }
  }
  backend_->poll(now_us);
  publish(now_us);
}

void ControllerService::publish(std::int64_t now_us) {
  const auto snap = backend_->snapshot();
  std::lock_guard lock(state_mu_);
  for (int i = 0; i < proto::kFans; ++i) {
    state_.fans[i].rpm = snap.modules[i / proto::kFansPerModule].rpm[i % proto::kFansPerModule];
  }
  for (int m = 0; m < proto::kModules; ++m) state_.lost[m] = snap.modules[m].lost;
  state_.malformed = snap.malformed;
  state_.stale = snap.stale(now_us, std::llround(3e6 / options_.telemetry_rate_hz));
  if (session_) {
    state_.tick = session_->next_tick();
    state_.events = session_->result().events.size();
    if (const auto* rec = session_->last_record()) {
      state_.t_s = static_cast<double>(rec->timestamp_us) * 1e-6;
      state_.phase = rec->phase;
      for (int i = 0; i < proto::kFans; ++i) {
        state_.fans[i].duty = rec->duty[i];
        state_.fans[i].target_rpm = rec->target_rpm[i];
      }
    }
  } else if (state_.status != "running") {
    for (auto& f : state_.fans) {
      f.duty = 0.0;
      f.target_rpm = 0.0;
    }
  }
}

void ControllerService::run_realtime(const std::atomic<bool>& stop) {
  const auto origin = net::Clock::now();
  if (auto* udp = dynamic_cast<UdpBackend*>(backend_.get())) udp->link().set_origin(origin);
  const auto period = std::chrono::microseconds(std::llround(1e6 / options_.command_rate_hz));
  const auto idle = std::min<std::chrono::microseconds>(period, std::chrono::milliseconds(10));
  while (!stop.load()) {
    const auto now = std::chrono::duration_cast<std::chrono::microseconds>(net::Clock::now() - origin).count();
    advance(now);
    std::this_thread::sleep_for(idle);
  }
  const auto now = std::chrono::duration_cast<std::chrono::microseconds>(net::Clock::now() - origin).count();
  request_abort();
  advance(now);
}

ServiceState ControllerService::state() const {
  std::lock_guard lock(state_mu_);
  return state_;
}

std::pair<std::uint64_t, std::optional<ctl::TelemetryRecord>> ControllerService::latest_record() const {
  std::lock_guard lock(state_mu_);
  return {record_seq_, latest_};
}

std::string ControllerService::state_json() const {
  const ServiceState s = state();
  json fans = json::array();
  for (int i = 0; i < proto::kFans; ++i) {
    fans.push_back({{"id", i},
                    {"module", i / proto::kFansPerModule},
                    {"fan", i % proto::kFansPerModule},
                    {"duty", s.fans[i].duty},
                    {"target_rpm", s.fans[i].target_rpm},
                    {"rpm", s.fans[i].rpm}});
  }
  json modules = json::array();
  for (int m = 0; m < proto::kModules; ++m) {
    modules.push_back({{"module", m}, {"stale", s.stale.test(static_cast<std::size_t>(m))}, {"lost", s.lost[m]}});
  }
  json j = {
      {"status", s.status},
      {"kind", s.profile ? json(std::string(ctl::to_string(s.profile->kind))) : json(nullptr)},
      {"profile", s.profile ? json::parse(ctl::profile_to_json(*s.profile)) : json(nullptr)},
      {"t_s", s.t_s},
      {"phase", s.phase},
      {"duration_s", s.duration_s},
      {"tick", s.tick},
      {"events", s.events},
      {"fans", fans},
      {"modules", modules},
      {"malformed", s.malformed},
      {"message", s.message},
      {"last_run_dir", s.last_run_dir},
  };
  return j.dump();
}

std::string record_json(const ctl::TelemetryRecord& r) {
  json j = {
      {"timestamp_us", r.timestamp_us},
      {"phase", r.phase},
      {"sync", r.sync},
      {"duty", r.duty},
      {"target_rpm", r.target_rpm},
      {"rpm", r.measured_rpm},
      {"lost_frames", r.lost_frames},
      {"stale_modules", r.stale_modules},
  };
  return j.dump();
}

}  // namespace gustwall::service
