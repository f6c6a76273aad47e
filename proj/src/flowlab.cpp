#include "gustwall/flowlab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gustwall/util.hpp"
#include "json.hpp"

namespace gustwall::flowlab {

using nlohmann::json;

namespace {

std::string code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingQuiescent: return "MissingQuiescent";
    case ErrorCode::NyquistViolation: return "NyquistViolation";
    case ErrorCode::IncompleteGrid: return "IncompleteGrid";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::BadLog: return "BadLog";
  }
  return "FlowError";
}

}  // namespace

FlowError::FlowError(ErrorCode code, const std::string& detail)
    : Error(Category::InputData, code_name(code) + ": " + detail), code_(code) {}

std::pair<std::size_t, std::size_t> SensorTimeSeries::index_range(const Window& w) const {
  const auto n = samples.size();
  auto index = [&](double t) {
    const double k = std::ceil((t - start_time) * sample_rate - 1e-9);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n)));
  };
  const auto lo = index(w.start_s);
  return {lo, std::max(lo, index(w.end_s))};
}

// ---------------------------------------------------------------------------
// Log files

SensorLog parse_log(std::string_view csv_text, std::string_view sidecar) {
  SensorLog log;
  json meta;
  try {
    meta = json::parse(sidecar);
  } catch (const json::parse_error& e) {
    throw FlowError(ErrorCode::BadLog, std::string("sidecar: ") + e.what());
  }
  auto window = [&](const char* key) -> std::optional<Window> {
    if (!meta.contains(key) || meta[key].is_null()) return std::nullopt;
    const auto& w = meta[key];
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number()) {
      throw FlowError(ErrorCode::BadLog, std::string("sidecar '") + key + "' must be [start_s, end_s]");
    }
    return Window{w[0].get<double>(), w[1].get<double>()};
  };
  try {
    log.meta.sample_rate_hz = meta.at("sample_rate_hz").get<double>();
    const auto units = meta.value("units", std::string("speed"));
    if (units != "speed" && units != "raw") throw FlowError(ErrorCode::BadLog, "units must be 'speed' or 'raw'");
    log.meta.units = units == "raw" ? Units::Raw : Units::Speed;
    log.meta.rpm_setting = meta.value("rpm_setting", 0.0);
    log.meta.seed = meta.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FlowError(ErrorCode::BadLog, std::string("sidecar: ") + e.what());
  }
  log.meta.quiescent = window("quiescent_window");
  log.meta.analysis = window("analysis_window");
  if (!(log.meta.sample_rate_hz > 0)) throw FlowError(ErrorCode::BadLog, "sample_rate_hz must be > 0");

  CsvReader reader{std::string(csv_text)};
  std::vector<std::string_view> f;
  bool header = false;
  const double tol = 0.25 / log.meta.sample_rate_hz;
  while (reader.next(f)) {
    if (!header) {
      if (f.size() != 3 || trim(f[0]) != "timestamp_s" || trim(f[1]) != "sensor_id" || trim(f[2]) != "value") {
        throw DataError("expected header 'timestamp_s,sensor_id,value'", reader.line());
      }
      header = true;
      continue;
    }
    if (f.size() != 3) throw DataError("expected 3 columns, found " + std::to_string(f.size()), reader.line());
    const double t = parse_double(f[0], reader.line());
    const auto id = parse_int(f[1], reader.line());
    const double v = parse_double(f[2], reader.line());
    if (id < 1 || id > kSensors) throw DataError("sensor_id outside 1..15", reader.line());
    auto [it, fresh] = log.series.try_emplace(static_cast<int>(id));
    auto& s = it->second;
    if (fresh) {
      s.sensor_id = static_cast<int>(id);
      s.sample_rate = log.meta.sample_rate_hz;
      s.units = log.meta.units;
      s.start_time = t;
      s.rpm_setting = log.meta.rpm_setting;
    } else {
      const double expected = s.start_time + static_cast<double>(s.samples.size()) / s.sample_rate;
      if (std::abs(t - expected) > tol) {
        throw DataError("sensor " + std::to_string(id) + " sample at " + format_double(t) +
                            " s breaks uniform sampling (expected " + format_double(expected) + ")",
                        reader.line());
      }
    }
    s.samples.push_back(v);
  }
  if (!header) throw DataError("log has no header row");
  return log;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

SensorLog load_log(const std::filesystem::path& csv_path) {
  if (!std::filesystem::exists(csv_path)) {
    throw Error(Error::Category::Usage, "log file not found: " + csv_path.string());
  }
  const auto side = sidecar_path(csv_path);
  if (!std::filesystem::exists(side)) {
    throw FlowError(ErrorCode::BadLog, "missing sidecar " + side.string());
  }
  return parse_log(read_file(csv_path), read_file(side));
}

std::string log_csv(const SensorLog& log) {
  std::string out = "timestamp_s,sensor_id,value\n";
  std::size_t n = 0;
  for (const auto& [_, s] : log.series) n = std::max(n, s.samples.size());
  out.reserve(n * log.series.size() * 24);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [id, s] : log.series) {
      if (i >= s.samples.size()) continue;
      out += format_sig(s.start_time + static_cast<double>(i) / s.sample_rate, 10);
      out += ',';
      out += std::to_string(id);
      out += ',';
      out += format_sig(s.samples[i], 8);
      out += '\n';
    }
  }
  return out;
}

std::string sidecar_json(const LogMeta& meta) {
  json j = {
      {"format", "gustwall-flowlog v1"},
      {"sample_rate_hz", meta.sample_rate_hz},
      {"units", meta.units == Units::Raw ? "raw" : "speed"},
      {"rpm_setting", meta.rpm_setting},
      {"seed", meta.seed},
  };
  j["quiescent_window"] = meta.quiescent ? json{meta.quiescent->start_s, meta.quiescent->end_s} : json(nullptr);
  j["analysis_window"] = meta.analysis ? json{meta.analysis->start_s, meta.analysis->end_s} : json(nullptr);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Transforms

SensorTimeSeries remove_offset(const SensorTimeSeries& series, const std::optional<Window>& quiescent) {
  const std::string who = "sensor " + std::to_string(series.sensor_id);
  if (!quiescent) throw FlowError(ErrorCode::MissingQuiescent, who + ": log has no quiescent window");
  if (quiescent->length() < 0.5 - 1e-12) {
    throw FlowError(ErrorCode::MissingQuiescent, who + ": quiescent window shorter than 0.5 s");
  }
  const auto [lo, hi] = series.index_range(*quiescent);
  if (hi <= lo || static_cast<double>(hi - lo) < 0.5 * series.sample_rate - 1.0) {
    throw FlowError(ErrorCode::MissingQuiescent, who + ": quiescent window not covered by samples");
  }
  double offset = 0.0;
  for (std::size_t i = lo; i < hi; ++i) offset += series.samples[i];
  offset /= static_cast<double>(hi - lo);
  SensorTimeSeries out = series;
  for (auto& v : out.samples) v -= offset;
  return out;
}

SensorTimeSeries calibrate(const SensorTimeSeries& series, const calib::SensorCalibration& sensors) {
  if (series.units == Units::Speed) return series;
  const auto& curve = sensors.at(series.sensor_id);
  SensorTimeSeries out = series;
  for (auto& v : out.samples) v = curve.eval(v);
  out.units = Units::Speed;
  return out;
}

Biquad butterworth_lowpass(double sample_rate, double cutoff_hz) {
  if (!(sample_rate > 2.0 * cutoff_hz) || !(cutoff_hz > 0)) {
    throw FlowError(ErrorCode::NyquistViolation, "sample rate " + format_double(sample_rate) +
                                                     " Hz must exceed twice the cutoff " + format_double(cutoff_hz) +
                                                     " Hz");
  }
  // Bilinear transform with prewarping so the -3 dB point lands on cutoff.
  const double k = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  const double k2 = k * k;
  const double norm = 1.0 / (1.0 + std::numbers::sqrt2 * k + k2);
  Biquad q;
  q.b0 = k2 * norm;
  q.b1 = 2.0 * q.b0;
  q.b2 = q.b0;
  q.a1 = 2.0 * (k2 - 1.0) * norm;
  q.a2 = (1.0 - std::numbers::sqrt2 * k + k2) * norm;
  return q;
}

std::size_t reflect_pad_length(double sample_rate, double cutoff_hz, std::size_t n) {
  // Envelope time constant of the analog prototype: 1 / (wc / sqrt 2).
  const double tau = std::numbers::sqrt2 / (2.0 * std::numbers::pi * cutoff_hz);
  const auto pad = static_cast<std::size_t>(std::ceil(3.0 * tau * sample_rate));
  return n == 0 ? 0 : std::min(pad, n - 1);
}

namespace {

// Direct form II transposed, started in steady state for its first input.
void run_section(const Biquad& q, std::vector<double>& x) {
  if (x.empty()) return;
  double z1 = (1.0 - q.b0) * x[0];
  double z2 = (q.b2 - q.a2) * x[0];
  for (double& v : x) {
    const double in = v;
    const double y = q.b0 * in + z1;
    z1 = q.b1 * in - q.a1 * y + z2;
    z2 = q.b2 * in - q.a2 * y;
    v = y;
  }
}

}  // namespace

std::vector<double> lowpass(std::span<const double> x, double sample_rate, double cutoff_hz) {
  const Biquad q = butterworth_lowpass(sample_rate, cutoff_hz);
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t pad = reflect_pad_length(sample_rate, cutoff_hz, n);

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t k = pad; k >= 1; --k) ext.push_back(2.0 * x[0] - x[k]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t k = 1; k <= pad; ++k) ext.push_back(2.0 * x[n - 1] - x[n - 1 - k]);

  run_section(q, ext);
  std::reverse(ext.begin(), ext.end());
  run_section(q, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

SensorTimeSeries lowpass(const SensorTimeSeries& series, double cutoff_hz) {
  SensorTimeSeries out = series;
  out.samples = lowpass(series.samples, series.sample_rate, cutoff_hz);
  return out;
}

FlowStats flow_stats(std::span<const double> samples) {
  FlowStats s;
  const auto n = samples.size();
  if (n == 0) {
    s.ti_defined = false;
    return s;
  }
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(n - 1));
  }
  if (s.mean < kMinMeanForTi) {
    s.ti_defined = false;
    s.ti = 0.0;
  } else {
    s.ti = s.std / s.mean;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Grid and maps

SensorPosition GridLayout::position(int sensor_id) const {
  if (sensor_id < 1 || sensor_id > columns * rows) {
    throw FlowError(ErrorCode::IncompleteGrid, "sensor id " + std::to_string(sensor_id) + " outside the lattice");
  }
  const int k = sensor_id - 1;
  return {column_x(k % columns), row_y(k / columns)};
}

namespace {

void require_complete(const std::map<int, double>& means, const GridLayout& layout) {
  std::string missing;
  for (int id = 1; id <= layout.columns * layout.rows; ++id) {
    const auto it = means.find(id);
    if (it != means.end() && std::isfinite(it->second)) continue;
    if (!missing.empty()) missing += ", ";
    missing += std::to_string(id);
  }
  if (!missing.empty()) throw FlowError(ErrorCode::IncompleteGrid, "missing sensors " + missing);
}

// Cell index and fraction along one lattice axis, clamped to the hull.
std::pair<int, double> locate(double v, int count, double first, double pitch) {
  const double s = (v - first) / pitch;
  if (s <= 0.0) return {0, 0.0};
  if (s >= count - 1) return {count - 2, 1.0};
  const double nearest = std::round(s);
  if (std::abs(s - nearest) * pitch < 1e-9) {
    const int node = static_cast<int>(nearest);
    return node == count - 1 ? std::pair{node - 1, 1.0} : std::pair{node, 0.0};
  }
  const int cell = static_cast<int>(std::floor(s));
  return {cell, s - cell};
}

}  // namespace

double interpolate_at(const std::map<int, double>& means, const GridLayout& layout, double x, double y) {
  require_complete(means, layout);
  const auto [c, u] = locate(x, layout.columns, layout.column_x(0), layout.width / layout.columns);
  const auto [r, v] = locate(y, layout.rows, layout.row_y(0), layout.height / layout.rows);
  auto m = [&](int col, int row) { return means.at(row * layout.columns + col + 1); };
  // Exact node values when both fractions are 0 or 1.
  const double bottom = u == 0.0 ? m(c, r) : u == 1.0 ? m(c + 1, r) : (1.0 - u) * m(c, r) + u * m(c + 1, r);
  const double top =
      u == 0.0 ? m(c, r + 1) : u == 1.0 ? m(c + 1, r + 1) : (1.0 - u) * m(c, r + 1) + u * m(c + 1, r + 1);
  if (v == 0.0) return bottom;
  if (v == 1.0) return top;
  return (1.0 - v) * bottom + v * top;
}

FlowMap interpolate_flow_map(const std::map<int, double>& means, const GridLayout& layout, int nx, int ny,
                             double rpm_setting) {
  require_complete(means, layout);
  if (nx < 2 || ny < 2) throw FlowError(ErrorCode::BadLog, "raster needs at least 2 x 2 nodes");
  FlowMap map;
  map.nx = nx;
  map.ny = ny;
  map.width = layout.width;
  map.height = layout.height;
  map.rpm_setting = rpm_setting;
  for (int id = 1; id <= kSensors; ++id) map.sensor_means[id - 1] = means.at(id);
  map.values.resize(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      map.values[static_cast<std::size_t>(j) * nx + i] = interpolate_at(means, layout, map.x_at(i), map.y_at(j));
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Pipeline

std::map<int, double> AnalyzeResult::means() const {
  std::map<int, double> out;
  for (const auto& s : sensors) {
    if (s.stats) out[s.sensor_id] = s.stats->mean;
  }
  return out;
}

AnalyzeResult analyze_log(const SensorLog& log, const AnalyzeOptions& options) {
  AnalyzeResult result;
  result.rpm_setting = log.meta.rpm_setting;
  for (int id = 1; id <= kSensors; ++id) {
    SensorResult r;
    r.sensor_id = id;
    try {
      const auto it = log.series.find(id);
      if (it == log.series.end()) throw FlowError(ErrorCode::IncompleteGrid, "no samples for sensor " + std::to_string(id));
      const auto& raw = it->second;
      SensorTimeSeries s = remove_offset(raw, log.meta.quiescent);
      if (s.units == Units::Raw) {
        if (!options.calibration) {
          throw FlowError(ErrorCode::BadLog, "raw log needs a sensor calibration file");
        }
        s = calibrate(s, *options.calibration);
      }
      s = lowpass(s, options.cutoff_hz);
      Window w = log.meta.analysis.value_or(
          Window{log.meta.quiescent->end_s, raw.start_time + raw.duration()});
      const auto [lo, hi] = s.index_range(w);
      if (static_cast<double>(hi - lo) < s.sample_rate - 0.5) {
        throw FlowError(ErrorCode::TooShort, "sensor " + std::to_string(id) + " has less than 1 s to analyze");
      }
      r.stats = flow_stats(std::span(s.samples).subspan(lo, hi - lo));
    } catch (const Error& e) {
      if (!options.permissive) throw;
      r.error = e.what();
    }
    result.sensors.push_back(std::move(r));
  }
  return result;
}

SpeedTable rpm_speed_table(const std::vector<AnalyzeResult>& runs) {
  std::map<double, std::pair<double, int>> by_rpm;  // rpm -> (speed sum, count)
  for (const auto& run : runs) {
    double sum = 0.0;
    for (int id : GridLayout::core_set) {
      const auto& s = run.sensors.at(static_cast<std::size_t>(id - 1));
      if (!s.stats) throw FlowError(ErrorCode::IncompleteGrid, "core sensor " + std::to_string(id) + " has no stats");
      sum += s.stats->mean;
    }
    auto& slot = by_rpm[run.rpm_setting];
    slot.first += sum / static_cast<double>(GridLayout::core_set.size());
    slot.second += 1;
  }
  if (by_rpm.size() < 2) throw FlowError(ErrorCode::TooShort, "need at least 2 distinct RPM settings");
  SpeedTable table;
  for (const auto& [rpm, acc] : by_rpm) {
    table.rows.push_back({rpm, acc.first / acc.second, acc.second});
    table.collapsed += acc.second - 1;
  }
  return table;
}

std::string stats_csv(const AnalyzeResult& result) {
  std::ostringstream out;
  out << "# gustwall-flowstats v1\n# ti post-filter\n";
  out << "sensor_id,rpm,mean,std,ti\n";
  for (const auto& s : result.sensors) {
    out << s.sensor_id << ',' << format_double(result.rpm_setting) << ',';
    if (!s.stats) {
      out << "nan,nan,nan\n";
      continue;
    }
    out << format_sig(s.stats->mean, 10) << ',' << format_sig(s.stats->std, 10) << ','
        << (s.stats->ti_defined ? format_sig(s.stats->ti, 10) : std::string("nan")) << '\n';
  }
  return out.str();
}

std::string flow_map_csv(const FlowMap& map) {
  std::ostringstream out;
  out << "# gustwall-flowmap v1\n# rpm " << format_double(map.rpm_setting) << '\n' << "x,y,speed\n";
  for (int j = 0; j < map.ny; ++j) {
    for (int i = 0; i < map.nx; ++i) {
      out << format_sig(map.x_at(i), 10) << ',' << format_sig(map.y_at(j), 10) << ','
          << format_sig(map.at(i, j), 10) << '\n';
    }
  }
  return out.str();
}

std::string table_csv(const SpeedTable& table) {
  std::vector<calib::Knot> points;
  for (const auto& r : table.rows) points.push_back({r.rpm, r.speed});
  const auto curve = calib::fit_monotone(calib::Domain::RpmToSpeed, points);
  std::string out = calib::curve_to_csv(curve);
  if (table.collapsed > 0) out += "# collapsed " + std::to_string(table.collapsed) + " duplicate setting(s)\n";
  return out;
}

}  // namespace gustwall::flowlab
