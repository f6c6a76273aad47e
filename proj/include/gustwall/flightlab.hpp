#pragma once

// Flight-log analytics: power, per-condition box statistics, cubic smoothing
// spline trends, phase averaging against sync events and response lag.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gustwall/ctl.hpp"
#include "gustwall/error.hpp"

namespace gustwall::flightlab {

enum class ErrorCode { TooFewSamples, DegenerateAbscissae, InsufficientPeriods, FlatSignal, BadInput };

class FlightError : public Error {
 public:
  FlightError(ErrorCode code, const std::string& detail);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct FlightRecord {
  std::int64_t timestamp_us = 0;
  double x = 0.0, y = 0.0, z = 0.0;             // m
  double roll = 0.0, pitch = 0.0, yaw = 0.0;    // degrees
  double voltage = 0.0;                         // V
  double current = 0.0;                         // A
  double condition = 0.0;                       // wind speed m/s or gust frequency Hz
};

// Header: timestamp_us,x,y,z,roll,pitch,yaw,voltage,current,condition
std::vector<FlightRecord> parse_flight_csv(std::string_view text);
std::vector<FlightRecord> load_flight_csv(const std::filesystem::path& path);
std::string flight_csv(const std::vector<FlightRecord>& records);

std::vector<double> power_series(const std::vector<FlightRecord>& records);

// ---------------------------------------------------------------------------

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0;
  std::size_t n = 0;
};

// Quantile with linear interpolation between closest ranks (type 7).
double quantile_type7(std::span<const double> sorted, double p);
BoxStats box_stats(std::vector<double> samples);

enum class Field { Pitch, Power };

struct ConditionStats {
  double condition = 0.0;
  BoxStats stats;
};

// Groups by condition value (ascending). Every group needs >= 5 samples;
// TooFewSamples names each offending group.
std::vector<ConditionStats> condition_stats(const std::vector<FlightRecord>& records, Field field,
                                            std::size_t min_samples = 5);

// ---------------------------------------------------------------------------

struct Point {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
};

// Natural cubic smoothing spline through the distinct abscissae.
struct SplineFit {
  std::vector<double> x;       // knots, strictly increasing
  std::vector<double> value;   // s(x_i)
  std::vector<double> second;  // s''(x_i); zero at both ends
  double lambda = 0.0;

  double operator()(double t) const;
};

// Minimizes sum w_i (y_i - s(x_i))^2 + lambda * integral s''^2. Duplicate x
// are merged by weight. Needs >= 4 distinct x (DegenerateAbscissae).
SplineFit smoothing_spline(std::vector<Point> points, double lambda);
double spline_objective(const SplineFit& fit, std::span<const Point> points, double lambda);
// integral of s''^2 over [x_0, x_n-1].
double roughness(const SplineFit& fit);

struct LambdaChoice {
  double lambda = 0.0;
  double loo_error = 0.0;
};
// Grid search over lambda minimizing exact leave-one-out squared error.
LambdaChoice choose_lambda_loo(std::span<const Point> points);

// ---------------------------------------------------------------------------

enum class Resample { Linear, Hold };
enum class Anchor {
  Rising,      // periods start at lo -> hi edges
  CycleStart,  // periods start where the program begins a cycle at lo
};

struct AlignOptions {
  int bins = 256;
  Resample resample = Resample::Linear;
  Anchor anchor = Anchor::Rising;
};

struct PhaseAverage {
  std::vector<double> phase;  // bin k at k / bins, in cycles
  std::vector<double> mean;
  std::vector<double> std;    // sample std across segments
  int segments = 0;
  double period_s = 0.0;      // mean segment length
};

// Period boundaries picked from the events according to the anchor.
std::vector<std::int64_t> period_starts(const std::vector<ctl::SyncEvent>& events, Anchor anchor);

// Folds a time series into the complete periods delimited by consecutive
// boundaries. Throws InsufficientPeriods for fewer than 2.
PhaseAverage gust_align(std::span<const std::int64_t> t_us, std::span<const double> values,
                        const std::vector<ctl::SyncEvent>& events, const AlignOptions& options = {});

struct LagResult {
  double lag_s = 0.0;
  double peak = 0.0;  // normalized correlation at the lag
};

// Uniformly sampled command and response on a common time base. Argmax of
// the normalized cross-correlation for lags in [0, period).
LagResult response_lag(std::span<const double> command, std::span<const double> response, double sample_rate_hz,
                       double period_s);

// ---------------------------------------------------------------------------
// Figure tables

std::string condition_stats_csv(const std::vector<ConditionStats>& rows, std::string_view field_name);
std::string spline_csv(const SplineFit& fit, int samples = 101);
std::string phase_csv(const std::vector<std::pair<std::string, PhaseAverage>>& columns);

// ---------------------------------------------------------------------------
// Synthetic fixtures, modeled on the vehicles' reported behavior. Not flight
// data.

enum class Vehicle { Flapper, Crazyflie };
std::string_view to_string(Vehicle v);

inline constexpr std::array<double, 6> kSweepSpeeds{0.5, 1.1, 1.7, 2.2, 2.7, 3.4};

// Exact per-condition power means the steady fixture is built around.
std::array<double, 6> fixture_power_means(Vehicle v);
std::array<double, 6> fixture_pitch_means(Vehicle v);

// Steady sweep: samples_per_group records at each sweep speed, 100 Hz.
std::vector<FlightRecord> synth_steady_flight(Vehicle v, std::uint64_t seed, int samples_per_group = 500);

struct GustFlight {
  std::vector<FlightRecord> records;
  std::vector<ctl::SyncEvent> events;
  std::vector<double> command_speed;  // per record, the programmed wind speed
};

// Square gust 1.3 -> 3.4 m/s at the given frequency; events come from the
// controller's own schedule so they match a real run tick for tick.
GustFlight synth_gust_flight(Vehicle v, double frequency_hz, double duration_s, std::uint64_t seed,
                             double record_rate_hz = 100.0);

// Time constant used for the vehicle's pitch response in the gust fixture.
double fixture_response_tau(Vehicle v);

}  // namespace gustwall::flightlab
