#include <cmath>
#include <iostream>
#include <memory>
#include <sstream>

#include "commands.hpp"
#include "gustwall/ctl.hpp"
#include "gustwall/flightlab.hpp"
#include "gustwall/flowlab.hpp"
#include "gustwall/manifest.hpp"
#include "gustwall/sim.hpp"
#include "gustwall/util.hpp"

namespace gustwall::cli {

namespace {

Error usage(const std::string& what) { return Error(Error::Category::Usage, what); }

void require_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw usage("file not found: " + path);
}

std::string fixed_name(double v) {
  // 0.25 -> "0p25"; used in file names.
  std::string s = format_double(v);
  for (auto& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

void emit(const std::filesystem::path& dir, const std::string& name, const std::string& text,
          std::vector<std::filesystem::path>& outputs) {
  write_file_atomic(dir / name, text);
  outputs.emplace_back(name);
}

void report(const std::filesystem::path& dir, const std::vector<std::filesystem::path>& outputs) {
  for (const auto& p : outputs) std::cerr << "wrote " << (dir / p).string() << "\n";
  std::cout << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// calib

struct CalibValidateFlags {
  std::string file;
};

int cmd_calib_validate(const CalibValidateFlags& f) {
  require_file(f.file);
  const auto c = calib::load(f.file);
  auto line = [](const calib::CalibrationCurve& curve, const std::string& name) {
    std::cout << name << ": " << curve.knots().size() << " knots, x [" << format_double(curve.x_min()) << ", "
              << format_double(curve.x_max()) << "], y [" << format_double(curve.y_min()) << ", "
              << format_double(curve.y_max()) << "]\n";
  };
  line(c.duty_rpm, "duty_rpm");
  line(c.rpm_speed, "rpm_speed");
  for (const auto& [id, curve] : c.sensors.sensors) line(curve, "sensor:" + std::to_string(id));
  std::cout << "max speed " << format_sig(c.max_speed(), 6) << " m/s\n";
  std::cout << "hash " << calib::calibration_hash(c) << "\n";
  return 0;
}

struct CalibSampleFlags {
  std::string file;
  std::string curve = "duty_speed";
  int points = 101;
  std::string out;
};

int cmd_calib_sample(const CalibSampleFlags& f) {
  const auto c = load_calibration(f.file);
  std::function<double(double)> eval;
  double lo = 0.0, hi = 1.0;
  if (f.curve == "duty_speed") {
    eval = [&](double x) { return c.speed_for_duty(x); };
    lo = c.duty_rpm.x_min();
    hi = c.duty_rpm.x_max();
  } else {
    const calib::CalibrationCurve* curve = nullptr;
    if (f.curve == "duty_rpm") {
      curve = &c.duty_rpm;
    } else if (f.curve == "rpm_speed") {
      curve = &c.rpm_speed;
    } else if (f.curve.rfind("sensor:", 0) == 0) {
      const int id = std::atoi(f.curve.c_str() + 7);
      if (!c.sensors.sensors.count(id)) throw usage("no curve for " + f.curve);
      curve = &c.sensors.at(id);
    } else {
      throw usage("unknown curve '" + f.curve + "' (duty_rpm, rpm_speed, duty_speed, sensor:N)");
    }
    eval = [curve](double x) { return curve->eval(x); };
    lo = curve->x_min();
    hi = curve->x_max();
  }
  std::ostringstream out;
  out << "x,y\n";
  for (int i = 0; i < f.points; ++i) {
    const double x = f.points == 1 ? lo : lo + (hi - lo) * i / (f.points - 1);
    out << format_sig(x, 12) << ',' << format_sig(eval(x), 12) << '\n';
  }
  if (f.out.empty()) {
    std::cout << out.str();
  } else {
    write_file_atomic(f.out, out.str());
  }
  return 0;
}

struct CalibDefaultFlags {
  std::string out;
};

int cmd_calib_default(const CalibDefaultFlags& f) {
  const auto text = calib::to_csv(calib::default_calibration());
  if (f.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(f.out, text);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// flow

struct FlowSynthFlags {
  std::string out = "flowlogs";
  std::vector<double> duties{1.0};
  std::uint64_t seed = 0;
  std::string config;
  std::string calib;
  double capture = 20.0;
  double rate = 3000.0;
};

int cmd_flow_synth(const FlowSynthFlags& f) {
  const auto calib = load_calibration(f.calib);
  const auto dir = ensure_dir(f.out);
  Manifest m;
  m.subcommand = "flow synth";
  m.started_utc = utc_iso8601();
  m.seed = f.seed;
  m.calib_hash = calib::calibration_hash(calib);
  if (!f.config.empty()) m.inputs.emplace_back(f.config);
  if (!f.calib.empty()) m.inputs.emplace_back(f.calib);

  sim::GridLogOptions options;
  options.emulator = load_emulator_config(f.config);
  options.emulator.seed = f.seed;
  options.capture_s = f.capture;
  options.sample_rate_hz = f.rate;
  std::ostringstream key;
  key << "flow synth|" << f.seed << '|' << format_double(f.capture) << '|' << format_double(f.rate);
  for (double duty : f.duties) {
    if (!(duty >= 0.0 && duty <= 1.0)) throw usage("--duty must lie in [0, 1]");
    key << '|' << format_double(duty);
    options.duty = duty;
    const auto log = sim::synthesize_grid_log(calib, options);
    const std::string stem = "grid_duty" + fixed_name(duty);
    emit(dir, stem + ".csv", flowlab::log_csv(log), m.outputs);
    emit(dir, stem + ".json", flowlab::sidecar_json(log.meta), m.outputs);
  }
  m.config_hash = hex64(fnv1a64(key.str()));
  write_manifest(dir, m);
  report(dir, m.outputs);
  return 0;
}

struct FlowAnalyzeFlags {
  std::vector<std::string> logs;
  std::string out = "flowstats";
  std::string calib;
  bool permissive = false;
  double cutoff = flowlab::kDefaultCutoffHz;
  std::string raster = "121x76";
  bool table_only = false;
};

std::pair<int, int> parse_raster(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("raster");
    const int nx = std::stoi(text.substr(0, x));
    const int ny = std::stoi(text.substr(x + 1));
    if (nx < 2 || ny < 2) throw std::out_of_range("raster");
    return {nx, ny};
  } catch (const std::logic_error&) {
    throw usage("--raster expects NXxNY with both >= 2, got '" + text + "'");
  }
}

int cmd_flow_analyze(const FlowAnalyzeFlags& f) {
  const auto [nx, ny] = parse_raster(f.raster);
  flowlab::AnalyzeOptions options;
  options.cutoff_hz = f.cutoff;
  options.permissive = f.permissive;
  std::optional<calib::Calibration> calib;
  if (!f.calib.empty()) {
    calib = load_calibration(f.calib);
    options.calibration = calib->sensors;
  }

  const auto dir = ensure_dir(f.out);
  Manifest m;
  m.subcommand = f.table_only ? "flow table" : "flow analyze";
  m.started_utc = utc_iso8601();
  if (calib) m.calib_hash = calib::calibration_hash(*calib);
  std::ostringstream key;
  key << m.subcommand << '|' << format_double(f.cutoff) << '|' << f.raster << '|' << f.permissive;

  std::vector<flowlab::AnalyzeResult> results;
  int failures = 0;
  for (const auto& path : f.logs) {
    require_file(path);
    const auto log = flowlab::load_log(path);
    m.inputs.emplace_back(path);
    m.inputs.push_back(flowlab::sidecar_path(path));
    m.seed = log.meta.seed;
    auto result = flowlab::analyze_log(log, options);
    for (const auto& s : result.sensors) {
      if (!s.error.empty()) {
        std::cerr << path << ": sensor " << s.sensor_id << ": " << s.error << "\n";
        ++failures;
      }
    }
    if (!f.table_only) {
      const std::string stem = std::filesystem::path(path).stem().string();
      emit(dir, "stats_" + stem + ".csv", flowlab::stats_csv(result), m.outputs);
      try {
        const auto map = flowlab::interpolate_flow_map(result.means(), {}, nx, ny, result.rpm_setting);
        emit(dir, "flowmap_" + stem + ".csv", flowlab::flow_map_csv(map), m.outputs);
      } catch (const flowlab::FlowError& e) {
        if (!f.permissive) throw;
        std::cerr << path << ": no flow map: " << e.what() << "\n";
      }
    }
    results.push_back(std::move(result));
  }
  if (f.table_only || results.size() >= 2) {
    const auto table = flowlab::rpm_speed_table(results);
    emit(dir, "rpm_speed.csv", flowlab::table_csv(table), m.outputs);
  }
  m.config_hash = hex64(fnv1a64(key.str()));
  write_manifest(dir, m);
  report(dir, m.outputs);
  if (failures > 0) std::cerr << failures << " sensor error(s) tolerated (--permissive)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// flight

flightlab::Vehicle parse_vehicle(const std::string& name) {
  if (name == "flapper") return flightlab::Vehicle::Flapper;
  if (name == "crazyflie") return flightlab::Vehicle::Crazyflie;
  throw usage("unknown vehicle '" + name + "' (flapper, crazyflie)");
}

struct FlightSynthFlags {
  std::string vehicle = "flapper";
  std::string kind = "steady";
  double frequency = 0.25;
  double duration = 32.0;
  int samples = 500;
  std::uint64_t seed = 0;
  std::string out = "flight";
};

int cmd_flight_synth(const FlightSynthFlags& f) {
  const auto vehicle = parse_vehicle(f.vehicle);
  const auto dir = ensure_dir(f.out);
  Manifest m;
  m.subcommand = "flight synth";
  m.started_utc = utc_iso8601();
  m.seed = f.seed;
  std::ostringstream key;
  key << "flight synth|" << f.vehicle << '|' << f.kind << '|' << f.seed;
  if (f.kind == "steady") {
    key << '|' << f.samples;
    emit(dir, "flight.csv", flightlab::flight_csv(flightlab::synth_steady_flight(vehicle, f.seed, f.samples)),
         m.outputs);
  } else if (f.kind == "gust") {
    key << '|' << format_double(f.frequency) << '|' << format_double(f.duration);
    const auto g = flightlab::synth_gust_flight(vehicle, f.frequency, f.duration, f.seed);
    emit(dir, "flight.csv", flightlab::flight_csv(g.records), m.outputs);
    emit(dir, "events.csv", ctl::events_csv(g.events), m.outputs);
  } else {
    throw usage("--kind must be steady or gust");
  }
  m.config_hash = hex64(fnv1a64(key.str()));
  write_manifest(dir, m);
  report(dir, m.outputs);
  return 0;
}

struct FlightAnalyzeFlags {
  std::string log;
  std::string events;
  std::string lambda = "loo";
  int bins = 256;
  std::string resample = "linear";
  std::string anchor = "rising";
  std::string calib;
  std::string out = "flightfigs";
};

int cmd_flight_analyze(const FlightAnalyzeFlags& f) {
  require_file(f.log);
  const auto records = flightlab::load_flight_csv(f.log);
  const auto dir = ensure_dir(f.out);
  Manifest m;
  m.subcommand = "flight analyze";
  m.started_utc = utc_iso8601();
  m.inputs.emplace_back(f.log);
  std::ostringstream key;
  key << "flight analyze|" << f.lambda << '|' << f.bins << '|' << f.resample << '|' << f.anchor;

  const auto pitch = flightlab::condition_stats(records, flightlab::Field::Pitch);
  const auto power = flightlab::condition_stats(records, flightlab::Field::Power);
  emit(dir, "pitch_vs_wind.csv", flightlab::condition_stats_csv(pitch, "pitch_deg"), m.outputs);
  emit(dir, "power_vs_wind.csv", flightlab::condition_stats_csv(power, "power_w"), m.outputs);

  // Spline trend of power against the condition, when there are enough levels.
  if (power.size() >= 4) {
    const auto p = flightlab::power_series(records);
    std::vector<flightlab::Point> points;
    points.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) points.push_back({records[i].condition, p[i], 1.0});
    double lambda = 0.0;
    if (f.lambda == "loo") {
      if (power.size() < 5) throw usage("--lambda loo needs at least 5 conditions; give a value");
      lambda = flightlab::choose_lambda_loo(points).lambda;
    } else {
      try {
        lambda = std::stod(f.lambda);
      } catch (const std::logic_error&) {
        throw usage("--lambda expects a number or 'loo'");
      }
      if (!(lambda >= 0)) throw usage("--lambda must be >= 0");
    }
    const auto fit = flightlab::smoothing_spline(points, lambda);
    emit(dir, "power_spline.csv", flightlab::spline_csv(fit), m.outputs);
    std::cerr << "power spline lambda " << format_sig(lambda, 6) << "\n";
  }

  if (!f.events.empty()) {
    require_file(f.events);
    m.inputs.emplace_back(f.events);
    const auto events = ctl::parse_events_csv(read_file(f.events));
    const auto calib = load_calibration(f.calib);
    if (!f.calib.empty()) {
      m.inputs.emplace_back(f.calib);
      m.calib_hash = calib::calibration_hash(calib);
    }

    flightlab::AlignOptions options;
    options.bins = f.bins;
    if (f.resample == "linear") {
      options.resample = flightlab::Resample::Linear;
    } else if (f.resample == "hold") {
      options.resample = flightlab::Resample::Hold;
    } else {
      throw usage("--resample must be linear or hold");
    }
    if (f.anchor == "rising") {
      options.anchor = flightlab::Anchor::Rising;
    } else if (f.anchor == "cycle-start") {
      options.anchor = flightlab::Anchor::CycleStart;
    } else {
      throw usage("--anchor must be rising or cycle-start");
    }

    std::vector<std::int64_t> t;
    std::vector<double> pitch_v, command;
    t.reserve(records.size());
    const auto power_v = flightlab::power_series(records);
    // Commanded wind speed as a step function of the sync events.
    std::size_t e = 0;
    double duty = events.empty() ? 0.0 : events.front().old_duty;
    for (const auto& r : records) {
      while (e < events.size() && events[e].timestamp_us <= r.timestamp_us) duty = events[e++].new_duty;
      t.push_back(r.timestamp_us);
      pitch_v.push_back(r.pitch);
      command.push_back(calib.speed_for_duty(duty));
    }
    const auto pa_pitch = flightlab::gust_align(t, pitch_v, events, options);
    const auto pa_power = flightlab::gust_align(t, power_v, events, options);
    const auto pa_cmd = flightlab::gust_align(t, command, events, options);
    emit(dir, "phase.csv", flightlab::phase_csv({{"command_speed", pa_cmd}, {"pitch", pa_pitch}, {"power", pa_power}}),
         m.outputs);

    if (records.size() < 2) throw flightlab::FlightError(flightlab::ErrorCode::TooFewSamples, "need 2 records");
    const double rate = 1e6 * static_cast<double>(records.size() - 1) /
                        static_cast<double>(records.back().timestamp_us - records.front().timestamp_us);
    const auto lag = flightlab::response_lag(command, pitch_v, rate, pa_pitch.period_s);
    std::ostringstream csv;
    csv << "# gustwall-lag v1\nfield,lag_s,peak,period_s\n";
    csv << "pitch," << format_sig(lag.lag_s, 10) << ',' << format_sig(lag.peak, 10) << ','
        << format_sig(pa_pitch.period_s, 10) << '\n';
    emit(dir, "lag.csv", csv.str(), m.outputs);
    std::cerr << "pitch lag " << format_sig(lag.lag_s, 4) << " s over " << pa_pitch.segments << " periods\n";
  }

  m.config_hash = hex64(fnv1a64(key.str()));
  write_manifest(dir, m);
  report(dir, m.outputs);
  return 0;
}

}  // namespace

void add_analysis_commands(CLI::App& app, Action& action) {
  auto* calib_cmd = app.add_subcommand("calib", "Calibration curves");
  calib_cmd->require_subcommand(1);
  {
    auto f = std::make_shared<CalibValidateFlags>();
    auto* sub = calib_cmd->add_subcommand("validate", "Check a calibration CSV and summarize its curves");
    sub->add_option("file", f->file, "Calibration CSV")->required();
    sub->callback([f, &action] { action = [f] { return cmd_calib_validate(*f); }; });
  }
  {
    auto f = std::make_shared<CalibSampleFlags>();
    auto* sub = calib_cmd->add_subcommand("sample", "Tabulate a curve as x,y CSV for plotting");
    sub->add_option("file", f->file, "Calibration CSV (default: built-in curves)");
    sub->add_option("--curve", f->curve, "duty_rpm, rpm_speed, duty_speed or sensor:N")->capture_default_str();
    sub->add_option("--points", f->points, "Number of evenly spaced samples")
        ->capture_default_str()
        ->check(CLI::Range(1, 1000000));
    sub->add_option("--out", f->out, "Output CSV (default: stdout)");
    sub->callback([f, &action] { action = [f] { return cmd_calib_sample(*f); }; });
  }
  {
    auto f = std::make_shared<CalibDefaultFlags>();
    auto* sub = calib_cmd->add_subcommand("default", "Print the built-in calibration in file format");
    sub->add_option("--out", f->out, "Output CSV (default: stdout)");
    sub->callback([f, &action] { action = [f] { return cmd_calib_default(*f); }; });
  }

  auto* flow = app.add_subcommand("flow", "Sensing-grid logs: synthesis and analysis");
  flow->require_subcommand(1);
  {
    auto f = std::make_shared<FlowSynthFlags>();
    auto* sub = flow->add_subcommand("synth", "Log the 15 grid probes of the emulated wall at uniform duties");
    sub->add_option("--out", f->out, "Output directory")->capture_default_str();
    sub->add_option("--duty", f->duties, "Uniform duty in [0, 1] (repeatable, one log each)");
    sub->add_option("--seed", f->seed, "Emulator seed")->capture_default_str();
    sub->add_option("--config", f->config, "Emulator config file");
    sub->add_option("--calib", f->calib, "Calibration CSV (default: built-in curves)");
    sub->add_option("--capture", f->capture, "Seconds logged after settling")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--rate", f->rate, "Sample rate in Hz")->capture_default_str()->check(CLI::PositiveNumber);
    sub->callback([f, &action] { action = [f] { return cmd_flow_synth(*f); }; });
  }
  for (const bool table_only : {false, true}) {
    auto f = std::make_shared<FlowAnalyzeFlags>();
    f->table_only = table_only;
    if (table_only) f->out = "flowtable";
    auto* sub = table_only ? flow->add_subcommand("table", "RPM -> centerline speed table from grid logs")
                           : flow->add_subcommand("analyze", "Per-sensor stats and flow maps from grid logs");
    sub->add_option("--log", f->logs, "Grid log CSV with its .json sidecar (repeatable)")->required();
    sub->add_option("--out", f->out, "Output directory")->capture_default_str();
    sub->add_option("--calib", f->calib, "Calibration CSV with sensor curves (needed for raw logs)");
    sub->add_flag("--permissive", f->permissive, "Report per-sensor errors but keep going");
    sub->add_option("--cutoff", f->cutoff, "Low-pass cutoff in Hz")->capture_default_str()->check(CLI::PositiveNumber);
    if (!table_only) sub->add_option("--raster", f->raster, "Flow-map raster nodes, NXxNY")->capture_default_str();
    sub->callback([f, &action] { action = [f] { return cmd_flow_analyze(*f); }; });
  }

  auto* flight = app.add_subcommand("flight", "Flight logs: synthetic fixtures and figure tables");
  flight->require_subcommand(1);
  {
    auto f = std::make_shared<FlightSynthFlags>();
    auto* sub = flight->add_subcommand("synth", "Write a synthetic flight log (not flight data)");
    sub->add_option("--vehicle", f->vehicle, "flapper or crazyflie")->capture_default_str();
    sub->add_option("--kind", f->kind, "steady (six-speed sweep) or gust (square 1.3 -> 3.4 m/s)")
        ->capture_default_str();
    sub->add_option("--frequency", f->frequency, "Gust frequency in Hz")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--duration", f->duration, "Gust run length in seconds")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--samples", f->samples, "Steady records per wind speed")
        ->capture_default_str()
        ->check(CLI::Range(5, 10000000));
    sub->add_option("--seed", f->seed, "Noise seed")->capture_default_str();
    sub->add_option("--out", f->out, "Output directory")->capture_default_str();
    sub->callback([f, &action] { action = [f] { return cmd_flight_synth(*f); }; });
  }
  {
    auto f = std::make_shared<FlightAnalyzeFlags>();
    auto* sub = flight->add_subcommand("analyze", "Box stats, power spline, phase averages and lag");
    sub->add_option("--log", f->log, "Flight log CSV")->required();
    sub->add_option("--events", f->events, "Sync events CSV from the run (enables phase.csv and lag.csv)");
    sub->add_option("--lambda", f->lambda, "Spline smoothing: a value, or loo for leave-one-out")
        ->capture_default_str();
    sub->add_option("--bins", f->bins, "Phase bins per period")->capture_default_str()->check(CLI::Range(2, 1 << 20));
    sub->add_option("--resample", f->resample, "linear or hold")->capture_default_str();
    sub->add_option("--anchor", f->anchor, "Period boundaries: rising (lo->hi edges) or cycle-start")
        ->capture_default_str();
    sub->add_option("--calib", f->calib, "Calibration CSV for duty -> speed (default: built-in curves)");
    sub->add_option("--out", f->out, "Output directory")->capture_default_str();
    sub->callback([f, &action] { action = [f] { return cmd_flight_analyze(*f); }; });
  }
}

}  // namespace gustwall::cli
