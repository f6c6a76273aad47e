#include <csignal>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "commands.hpp"
#include "gustwall/api.hpp"
#include "gustwall/ctl.hpp"
#include "gustwall/manifest.hpp"
#include "gustwall/net.hpp"
#include "gustwall/service.hpp"
#include "gustwall/sim.hpp"
#include "gustwall/util.hpp"

#ifndef GUSTWALL_PRESET_DIR
#define GUSTWALL_PRESET_DIR ""
#endif

namespace gustwall::cli {

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

Error usage(const std::string& what) { return Error(Error::Category::Usage, what); }

// A path that exists wins; otherwise a bare preset name ("gust-0.25hz").
std::filesystem::path resolve_profile(const std::string& arg) {
  std::filesystem::path p(arg);
  if (std::filesystem::exists(p)) return p;
  const std::filesystem::path presets(GUSTWALL_PRESET_DIR);
  if (!presets.empty() && p.parent_path().empty()) {
    for (auto candidate : {presets / arg, presets / (arg + ".json")}) {
      if (std::filesystem::exists(candidate)) return candidate;
    }
  }
  return p;  // load_profile reports it missing
}

int base_port_from(int flag, const emu::EmulatorConfig& config) {
  if (flag > 0) return flag;
  if (std::getenv("GUSTWALL_BASE_PORT")) return net::default_base_port();
  return config.base_port;
}

int exit_for(ctl::SessionStatus status) {
  switch (status) {
    case ctl::SessionStatus::Completed: return 0;
    case ctl::SessionStatus::Degraded: return 4;
    default: return 1;
  }
}

struct SessionFlags {
  std::string profile;
  double duration = 0.0;
  bool closed_loop = false;
  double kp = ctl::PiGains{}.kp;
  double ki = ctl::PiGains{}.ki;
  double command_rate = 20.0;
  double telemetry_rate = 20.0;
  std::string out = "runs";
  std::string calib;
  std::uint64_t seed = 0;
};

void add_session_flags(CLI::App* sub, SessionFlags& f) {
  sub->add_option("--profile", f.profile, "Profile JSON file or preset name (steady-sweep, gust-0.5hz, ...)")
      ->required();
  sub->add_option("--duration", f.duration, "Session length in seconds (default: the profile's)")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--closed-loop", f.closed_loop, "Regulate fan RPM from tachometer feedback");
  sub->add_option("--kp", f.kp, "Proportional gain, duty per RPM of error")->capture_default_str();
  sub->add_option("--ki", f.ki, "Integral gain, duty per RPM-second")->capture_default_str();
  sub->add_option("--command-rate", f.command_rate, "Command rate in Hz")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--telemetry-rate", f.telemetry_rate, "Expected endpoint telemetry rate in Hz")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", f.out, "Parent directory for run directories")->capture_default_str();
  sub->add_option("--calib", f.calib, "Calibration CSV (default: built-in curves)");
  sub->add_option("--seed", f.seed, "Seed recorded in the manifest (and used by the emulator for sim)")
      ->capture_default_str();
}

ctl::SessionOptions session_options(const SessionFlags& f) {
  ctl::SessionOptions o;
  o.duration_s = f.duration;
  o.closed_loop = f.closed_loop;
  o.gains = {f.kp, f.ki};
  o.command_rate_hz = f.command_rate;
  o.telemetry_rate_hz = f.telemetry_rate;
  o.seed = f.seed;
  return o;
}

std::filesystem::path finish_run(const SessionFlags& f, const std::filesystem::path& profile_path,
                                 const ctl::Schedule& schedule, const ctl::SessionOptions& options,
                                 const ctl::SessionResult& result, const calib::Calibration& calib,
                                 const std::string& subcommand, const std::string& started,
                                 std::vector<std::string> inputs, std::string extra_json = "{}") {
  ctl::RunInfo info;
  info.subcommand = subcommand;
  info.calib_hash = calib::calibration_hash(calib);
  info.started_utc = started;
  inputs.insert(inputs.begin(), profile_path.string());
  if (!f.calib.empty()) inputs.push_back(f.calib);
  info.inputs = std::move(inputs);
  info.extra_json = std::move(extra_json);
  const auto dir = ctl::write_run_directory(ensure_dir(f.out), schedule, options, result, info);
  std::cerr << "status " << ctl::to_string(result.status) << ", " << result.records.size() << " telemetry rows, "
            << result.events.size() << " sync events";
  if (result.silent_modules.any()) {
    std::cerr << ", silent modules:";
    for (int m = 0; m < proto::kModules; ++m) {
      if (result.silent_modules.test(static_cast<std::size_t>(m))) std::cerr << ' ' << m;
    }
  }
  if (!result.message.empty()) std::cerr << " (" << result.message << ")";
  std::cerr << "\n";
  std::cout << dir.string() << "\n";
  return dir;
}

// ---------------------------------------------------------------------------

struct EmulateFlags {
  std::string config;
  std::string calib;
  int base_port = 0;
  std::string host;
  std::string modules = "0-14";
  std::optional<std::uint64_t> seed;
  double exit_after = 0.0;
  std::string table_out;
};

int cmd_emulate(const EmulateFlags& f) {
  auto config = load_emulator_config(f.config);
  const auto calib = load_calibration(f.calib);
  config.base_port = base_port_from(f.base_port, config);
  if (!f.host.empty()) config.host = f.host;
  if (f.seed) config.seed = *f.seed;

  net::EndpointServer server(config, calib, parse_module_list(f.modules));
  net::EndpointTable table = net::EndpointTable::local(config.base_port, config.host);
  for (int m : server.modules()) {
    std::cout << "module " << m << " " << config.host << ":" << server.port_of(m) << "\n";
  }
  std::cout.flush();
  if (!f.table_out.empty()) write_file_atomic(f.table_out, net::endpoint_table_json(table));

  install_signal_handlers();
  server.start();
  const auto t0 = net::Clock::now();
  while (!stop_requested().load()) {
    if (f.exit_after > 0 && net::Clock::now() - t0 >= std::chrono::duration<double>(f.exit_after)) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  server.stop();

  for (const auto& [module, duties] : server.duties()) {
    std::cout << "final module " << module << " duty";
    for (double d : duties) std::cout << ' ' << format_sig(d, 4);
    std::cout << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct RunFlags {
  SessionFlags s;
  std::string endpoints;
  int base_port = 0;
  std::string host = "127.0.0.1";
  int ping_timeout_ms = 1000;
};

int cmd_run(const RunFlags& f) {
  const auto profile_path = resolve_profile(f.s.profile);
  const auto profile = ctl::load_profile(profile_path);
  const auto calib = load_calibration(f.s.calib);
  const auto schedule = ctl::compile_profile(profile, calib);

  std::vector<std::string> inputs;
  net::EndpointTable table;
  if (!f.endpoints.empty()) {
    table = net::load_endpoint_table(f.endpoints);
    inputs.push_back(f.endpoints);
  } else {
    table = net::EndpointTable::local(f.base_port > 0 ? f.base_port : net::default_base_port(), f.host);
  }

  net::UdpRunOptions options;
  options.session = session_options(f.s);
  options.ping_timeout = std::chrono::milliseconds(f.ping_timeout_ms);

  install_signal_handlers();
  const std::string started = utc_iso8601();
  const auto result = net::run_session_udp(schedule, calib, table, options, &stop_requested());
  finish_run(f.s, profile_path, schedule, options.session, result, calib, "run", started, inputs);
  return exit_for(result.status);
}

// ---------------------------------------------------------------------------

struct SimFlags {
  SessionFlags s;
  std::string config;
  std::vector<std::string> kills;
  std::vector<std::string> probes;
  double probe_rate = 1000.0;
};

sim::KillAt parse_kill(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw usage("--kill expects MODULE@SECONDS, got '" + text + "'");
  try {
    const int module = std::stoi(text.substr(0, at));
    const double t = std::stod(text.substr(at + 1));
    if (module < 0 || module >= proto::kModules || !(t >= 0)) throw std::out_of_range("kill");
    return {module, std::llround(t * 1e6)};
  } catch (const std::logic_error&) {
    throw usage("bad --kill '" + text + "'");
  }
}

emu::Point parse_point(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument("point");
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::logic_error&) {
    throw usage("--probe expects X,Y in metres, got '" + text + "'");
  }
}

int cmd_sim(const SimFlags& f) {
  const auto profile_path = resolve_profile(f.s.profile);
  const auto profile = ctl::load_profile(profile_path);
  const auto calib = load_calibration(f.s.calib);
  const auto schedule = ctl::compile_profile(profile, calib);

  sim::SimRunOptions options;
  options.session = session_options(f.s);
  options.emulator = load_emulator_config(f.config);
  options.emulator.seed = f.s.seed;
  for (const auto& k : f.kills) options.kills.push_back(parse_kill(k));
  for (const auto& p : f.probes) options.probes.push_back({parse_point(p), f.probe_rate});

  const std::string started = utc_iso8601();
  const auto result = sim::run_session_sim(schedule, calib, options);

  std::vector<std::string> inputs;
  if (!f.config.empty()) inputs.push_back(f.config);
  std::string extra = "{}";
  if (!options.probes.empty()) extra = R"({"probes_csv":"probes.csv"})";
  const auto dir =
      finish_run(f.s, profile_path, schedule, options.session, result.session, calib, "sim", started, inputs, extra);

  if (!options.probes.empty()) {
    std::ostringstream csv;
    csv << "# gustwall-probes v1\nt_s";
    for (std::size_t i = 0; i < options.probes.size(); ++i) {
      csv << ",probe_" << i << "@" << format_double(options.probes[i].position.x) << ";"
          << format_double(options.probes[i].position.y);
    }
    csv << "\n";
    std::size_t n = 0;
    for (const auto& s : result.probe_samples) n = std::max(n, s.size());
    for (std::size_t k = 0; k < n; ++k) {
      csv << format_double(static_cast<double>(k) / f.probe_rate);
      for (const auto& s : result.probe_samples) csv << ',' << (k < s.size() ? format_double(s[k]) : "");
      csv << '\n';
    }
    write_file_atomic(dir / "probes.csv", csv.str());
  }
  return exit_for(result.session.status);
}

// ---------------------------------------------------------------------------

struct ServeFlags {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool sim = false;
  std::string config;
  std::string calib;
  std::string endpoints;
  int base_port = 0;
  std::string out;
  bool closed_loop = false;
  double max_duration = 3600.0;
  std::uint64_t seed = 0;
};

int cmd_serve(const ServeFlags& f) {
  const auto calib = load_calibration(f.calib);
  std::unique_ptr<service::WallBackend> backend;
  if (f.sim) {
    auto config = load_emulator_config(f.config);
    config.seed = f.seed;
    backend = std::make_unique<service::SimBackend>(config, calib);
  } else {
    const auto table = !f.endpoints.empty()
                           ? net::load_endpoint_table(f.endpoints)
                           : net::EndpointTable::local(f.base_port > 0 ? f.base_port : net::default_base_port());
    backend = std::make_unique<service::UdpBackend>(table);
  }

  service::ServiceOptions options;
  options.closed_loop = f.closed_loop;
  options.max_duration_s = f.max_duration;
  options.seed = f.seed;
  if (!f.out.empty()) options.out_dir = ensure_dir(f.out);

  service::ControllerService svc(calib, std::move(backend), options);
  api::ApiServer server(svc, f.host, f.port);
  server.start();
  std::cout << "listening on http://" << f.host << ":" << server.port() << "\n";
  std::cout.flush();

  install_signal_handlers();
  svc.run_realtime(stop_requested());
  server.stop();
  return 0;
}

}  // namespace

std::atomic<bool>& stop_requested() { return g_stop; }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

std::vector<int> parse_module_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(s, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != s.size() || v < 0 || v >= proto::kModules) throw usage("bad module list '" + text + "'");
    return v;
  };
  while (std::getline(ss, part, ',')) {
    part = std::string(trim(part));
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(part));
      continue;
    }
    const int a = number(part.substr(0, dash));
    const int b = number(part.substr(dash + 1));
    if (b < a) throw usage("bad module range '" + part + "'");
    for (int m = a; m <= b; ++m) out.push_back(m);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw usage("empty module list");
  return out;
}

calib::Calibration load_calibration(const std::string& path) {
  if (path.empty()) return calib::default_calibration();
  if (!std::filesystem::exists(path)) throw usage("calibration file not found: " + path);
  return calib::load(path);
}

emu::EmulatorConfig load_emulator_config(const std::string& path) {
  if (path.empty()) return {};
  if (!std::filesystem::exists(path)) throw usage("emulator config not found: " + path);
  return emu::parse_emulator_config(read_file(path));
}

std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Error::Category::Usage, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void add_session_commands(CLI::App& app, Action& action) {
  {
    auto f = std::make_shared<EmulateFlags>();
    auto* sub = app.add_subcommand("emulate", "Serve emulated fan-array modules over UDP");
    sub->add_option("--config", f->config, "Emulator config file (key = value)");
    sub->add_option("--calib", f->calib, "Calibration CSV (default: built-in curves)");
    sub->add_option("--base-port", f->base_port, "Port of module 0; module m listens on base+m")
        ->check(CLI::Range(1, 65535 - proto::kModules));
    sub->add_option("--host", f->host, "Address to bind");
    sub->add_option("--modules", f->modules, "Modules to serve, e.g. 0-13 or 3,7")->capture_default_str();
    sub->add_option("--seed", f->seed, "Emulator seed (overrides the config)");
    sub->add_option("--exit-after", f->exit_after, "Stop after this many seconds (0 = run until signalled)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--table-out", f->table_out, "Also write the endpoint table as JSON here");
    sub->callback([f, &action] { action = [f] { return cmd_emulate(*f); }; });
  }
  {
    auto f = std::make_shared<RunFlags>();
    auto* sub = app.add_subcommand("run", "Run a wind profile against the wall's UDP endpoints");
    add_session_flags(sub, f->s);
    sub->add_option("--endpoints", f->endpoints, "Endpoint table JSON (default: host:base-port+m)");
    sub->add_option("--base-port", f->base_port, "Port of module 0 (default: $GUSTWALL_BASE_PORT or 47100)")
        ->check(CLI::Range(1, 65535 - proto::kModules));
    sub->add_option("--host", f->host, "Endpoint host when no table is given")->capture_default_str();
    sub->add_option("--ping-timeout", f->ping_timeout_ms, "Milliseconds to wait for every module's PONG")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->callback([f, &action] { action = [f] { return cmd_run(*f); }; });
  }
  {
    auto f = std::make_shared<SimFlags>();
    auto* sub = app.add_subcommand("sim", "Run a wind profile against the in-process emulator on a simulated clock");
    add_session_flags(sub, f->s);
    sub->add_option("--config", f->config, "Emulator config file");
    sub->add_option("--kill", f->kills, "Unplug a module mid-run: MODULE@SECONDS (repeatable)");
    sub->add_option("--probe", f->probes, "Log a plume probe at X,Y metres on the test plane (repeatable)");
    sub->add_option("--probe-rate", f->probe_rate, "Probe sample rate in Hz")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->callback([f, &action] { action = [f] { return cmd_sim(*f); }; });
  }
  {
    auto f = std::make_shared<ServeFlags>();
    auto* sub = app.add_subcommand("serve", "Operator API (HTTP/JSON + server-sent telemetry)");
    sub->add_option("--host", f->host, "Address to bind")->capture_default_str();
    sub->add_option("--port", f->port, "HTTP port (0 picks a free one)")
        ->capture_default_str()
        ->check(CLI::Range(0, 65535));
    sub->add_flag("--sim", f->sim, "Drive the in-process emulator instead of UDP endpoints");
    sub->add_option("--config", f->config, "Emulator config file (with --sim)");
    sub->add_option("--calib", f->calib, "Calibration CSV (default: built-in curves)");
    sub->add_option("--endpoints", f->endpoints, "Endpoint table JSON (without --sim)");
    sub->add_option("--base-port", f->base_port, "Port of module 0 (without --sim)")
        ->check(CLI::Range(1, 65535 - proto::kModules));
    sub->add_option("--out", f->out, "Write a run directory here for every finished profile");
    sub->add_flag("--closed-loop", f->closed_loop, "Regulate fan RPM from tachometer feedback");
    sub->add_option("--max-duration", f->max_duration, "Cap for periodic profiles without a duration, seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", f->seed, "Seed for the emulator and manifests")->capture_default_str();
    sub->callback([f, &action] { action = [f] { return cmd_serve(*f); }; });
  }
}

}  // namespace gustwall::cli
