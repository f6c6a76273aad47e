#pragma once

// Sensing-grid analysis: 15-sensor logs in, per-sensor mean / std / TI,
// interpolated flow maps and RPM -> speed tables out.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gustwall/calib.hpp"
#include "gustwall/error.hpp"

namespace gustwall::flowlab {

inline constexpr int kSensors = 15;
inline constexpr double kDefaultCutoffHz = 50.0;
inline constexpr double kMinMeanForTi = 0.05;  // m/s

enum class ErrorCode { MissingQuiescent, NyquistViolation, IncompleteGrid, TooShort, BadLog };

class FlowError : public Error {
 public:
  FlowError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Units { Speed, Raw };

struct Window {
  double start_s = 0.0;
  double end_s = 0.0;
  double length() const { return end_s - start_s; }
};

struct SensorTimeSeries {
  int sensor_id = 0;
  double sample_rate = 0.0;
  std::vector<double> samples;
  Units units = Units::Speed;
  double start_time = 0.0;
  double rpm_setting = 0.0;

  double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
  // Sample indices whose timestamps fall in [w.start_s, w.end_s).
  std::pair<std::size_t, std::size_t> index_range(const Window& w) const;
};

struct LogMeta {
  double sample_rate_hz = 3000.0;
  Units units = Units::Speed;
  double rpm_setting = 0.0;
  std::optional<Window> quiescent;
  // Statistics window; defaults to everything after the quiescent window.
  std::optional<Window> analysis;
  std::uint64_t seed = 0;
};

struct SensorLog {
  LogMeta meta;
  std::map<int, SensorTimeSeries> series;
};

// CSV "timestamp_s,sensor_id,value" plus a JSON sidecar (see docs).
SensorLog parse_log(std::string_view csv_text, std::string_view sidecar_json);
// Reads <stem>.csv and its sidecar <stem>.json.
SensorLog load_log(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);
std::string log_csv(const SensorLog& log);
std::string sidecar_json(const LogMeta& meta);

// Subtracts the quiescent-window mean. Throws MissingQuiescent when the
// window is absent, shorter than 0.5 s or outside the series.
SensorTimeSeries remove_offset(const SensorTimeSeries& series, const std::optional<Window>& quiescent);

// Raw readings to m/s through the sensor's curve; speed series pass through.
SensorTimeSeries calibrate(const SensorTimeSeries& series, const calib::SensorCalibration& sensors);

// Second-order Butterworth section, -3 dB at cutoff per pass, run forward and
// backward. Odd reflection padding of three time constants at both ends.
// Throws NyquistViolation unless sample_rate > 2 * cutoff.
std::vector<double> lowpass(std::span<const double> x, double sample_rate, double cutoff_hz = kDefaultCutoffHz);
SensorTimeSeries lowpass(const SensorTimeSeries& series, double cutoff_hz = kDefaultCutoffHz);

struct Biquad {
  double b0, b1, b2, a1, a2;
};
Biquad butterworth_lowpass(double sample_rate, double cutoff_hz);
std::size_t reflect_pad_length(double sample_rate, double cutoff_hz, std::size_t n);

struct FlowStats {
  double mean = 0.0;
  double std = 0.0;
  double ti = 0.0;
  bool ti_defined = true;  // false when mean < 0.05 m/s
};

FlowStats flow_stats(std::span<const double> samples);

// ---------------------------------------------------------------------------
// Grid

struct SensorPosition {
  double x = 0.0;
  double y = 0.0;
};

struct GridLayout {
  double width = 1.2;
  double height = 0.75;
  int columns = 5;
  int rows = 3;

  // Cell centers of the 5 x 3 lattice, numbered row-major from 1.
  SensorPosition position(int sensor_id) const;
  double column_x(int c) const { return (c + 0.5) * width / columns; }
  double row_y(int r) const { return (r + 0.5) * height / rows; }

  static constexpr std::array<int, 6> boundary_set{1, 5, 6, 10, 11, 15};
  static constexpr std::array<int, 3> core_set{7, 8, 9};
};

struct FlowMap {
  int nx = 121;  // raster nodes along x, spanning [0, width]
  int ny = 76;
  double width = 1.2;
  double height = 0.75;
  std::vector<double> values;  // row-major, y outer
  std::array<double, kSensors> sensor_means{};
  double rpm_setting = 0.0;

  double x_at(int i) const { return width * i / (nx - 1); }
  double y_at(int j) const { return height * j / (ny - 1); }
  double at(int i, int j) const { return values.at(static_cast<std::size_t>(j) * nx + i); }
};

// Bilinear interpolation of the lattice means; nearest-edge extension
// outside the lattice hull. Coordinates within 1e-9 m of a lattice line snap
// onto it, so nodes reproduce the sensor means exactly.
double interpolate_at(const std::map<int, double>& means, const GridLayout& layout, double x, double y);

// Throws IncompleteGrid naming the missing sensors.
FlowMap interpolate_flow_map(const std::map<int, double>& means, const GridLayout& layout, int nx = 121,
                             int ny = 76, double rpm_setting = 0.0);

// ---------------------------------------------------------------------------
// Pipeline

struct AnalyzeOptions {
  double cutoff_hz = kDefaultCutoffHz;
  bool permissive = false;  // keep going past per-sensor errors
  std::optional<calib::SensorCalibration> calibration;
};

struct SensorResult {
  int sensor_id = 0;
  std::optional<FlowStats> stats;
  std::string error;
};

struct AnalyzeResult {
  double rpm_setting = 0.0;
  std::vector<SensorResult> sensors;  // ordered by id, all 15
  std::map<int, double> means() const;
};

// remove_offset -> calibrate -> lowpass -> flow_stats over the analysis window.
AnalyzeResult analyze_log(const SensorLog& log, const AnalyzeOptions& options = {});

struct TableRow {
  double rpm = 0.0;
  double speed = 0.0;  // mean of the core sensors
  int runs = 1;        // settings merged into this row
};

struct SpeedTable {
  std::vector<TableRow> rows;  // sorted by rpm
  int collapsed = 0;           // duplicate settings merged
};

SpeedTable rpm_speed_table(const std::vector<AnalyzeResult>& runs);

std::string stats_csv(const AnalyzeResult& result);
std::string flow_map_csv(const FlowMap& map);
// calib file format, rpm_speed domain (monotone fit of the table rows).
std::string table_csv(const SpeedTable& table);

}  // namespace gustwall::flowlab
