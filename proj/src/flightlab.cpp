#include "gustwall/flightlab.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "gustwall/util.hpp"

namespace gustwall::flightlab {

namespace {

std::string code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateAbscissae: return "DegenerateAbscissae";
    case ErrorCode::InsufficientPeriods: return "InsufficientPeriods";
    case ErrorCode::FlatSignal: return "FlatSignal";
    case ErrorCode::BadInput: return "BadInput";
  }
  return "FlightError";
}

constexpr std::string_view kFlightHeader = "timestamp_us,x,y,z,roll,pitch,yaw,voltage,current,condition";

}  // namespace

FlightError::FlightError(ErrorCode code, const std::string& detail)
    : Error(Category::InputData, code_name(code) + ": " + detail), code_(code) {}

// ---------------------------------------------------------------------------
// Records

std::vector<FlightRecord> parse_flight_csv(std::string_view text) {
  CsvReader reader{std::string(text)};
  std::vector<std::string_view> f;
  std::vector<FlightRecord> out;
  bool header = false;
  while (reader.next(f)) {
    if (!header) {
      std::string joined;
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (i) joined += ',';
        joined += trim(f[i]);
      }
      if (joined != kFlightHeader) throw DataError("expected header '" + std::string(kFlightHeader) + "'", reader.line());
      header = true;
      continue;
    }
    if (f.size() != 10) throw DataError("expected 10 columns, found " + std::to_string(f.size()), reader.line());
    const auto line = reader.line();
    FlightRecord r;
    r.timestamp_us = parse_int(f[0], line);
    r.x = parse_double(f[1], line);
    r.y = parse_double(f[2], line);
    r.z = parse_double(f[3], line);
    r.roll = parse_double(f[4], line);
    r.pitch = parse_double(f[5], line);
    r.yaw = parse_double(f[6], line);
    r.voltage = parse_double(f[7], line);
    r.current = parse_double(f[8], line);
    r.condition = parse_double(f[9], line);
    if (!out.empty() && r.timestamp_us <= out.back().timestamp_us) {
      throw DataError("timestamps must be strictly increasing", line);
    }
    if (!(r.voltage > 0.0)) throw DataError("voltage must be > 0", line);
    out.push_back(r);
  }
  if (!header) throw DataError("flight log has no header row");
  return out;
}

std::vector<FlightRecord> load_flight_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Error::Category::Usage, "flight log not found: " + path.string());
  return parse_flight_csv(read_file(path));
}

std::string flight_csv(const std::vector<FlightRecord>& records) {
  std::ostringstream out;
  out << "# gustwall-flight v1\n" << kFlightHeader << '\n';
  for (const auto& r : records) {
    out << r.timestamp_us;
    for (double v : {r.x, r.y, r.z, r.roll, r.pitch, r.yaw, r.voltage, r.current, r.condition}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
  return out.str();
}

std::vector<double> power_series(const std::vector<FlightRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.voltage * r.current);
  return out;
}

// ---------------------------------------------------------------------------
// Box statistics

double quantile_type7(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw FlightError(ErrorCode::TooFewSamples, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> samples) {
  if (samples.empty()) throw FlightError(ErrorCode::TooFewSamples, "no samples");
  std::sort(samples.begin(), samples.end());
  BoxStats b;
  b.n = samples.size();
  b.min = samples.front();
  b.max = samples.back();
  b.q1 = quantile_type7(samples, 0.25);
  b.median = quantile_type7(samples, 0.5);
  b.q3 = quantile_type7(samples, 0.75);
  // Sorted summation keeps the mean independent of input order.
  b.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(b.n);
  return b;
}

std::vector<ConditionStats> condition_stats(const std::vector<FlightRecord>& records, Field field,
                                            std::size_t min_samples) {
  std::map<double, std::vector<double>> groups;
  for (const auto& r : records) {
    groups[r.condition].push_back(field == Field::Pitch ? r.pitch : r.voltage * r.current);
  }
  std::string short_groups;
  for (const auto& [cond, v] : groups) {
    if (v.size() >= min_samples) continue;
    if (!short_groups.empty()) short_groups += "; ";
    short_groups += "condition " + format_double(cond) + " has " + std::to_string(v.size());
  }
  if (!short_groups.empty()) {
    throw FlightError(ErrorCode::TooFewSamples,
                      short_groups + " (need " + std::to_string(min_samples) + " per group)");
  }
  std::vector<ConditionStats> out;
  for (auto& [cond, v] : groups) out.push_back({cond, box_stats(std::move(v))});
  return out;
}

// ---------------------------------------------------------------------------
// Smoothing spline

double SplineFit::operator()(double t) const {
  const std::size_t n = x.size();
  if (t <= x.front()) {
    const double h = x[1] - x[0];
    const double slope = (value[1] - value[0]) / h - h * (2.0 * second[0] + second[1]) / 6.0;
    return value[0] + (t - x[0]) * slope;
  }
  if (t >= x.back()) {
    const double h = x[n - 1] - x[n - 2];
    const double slope = (value[n - 1] - value[n - 2]) / h + h * (second[n - 2] + 2.0 * second[n - 1]) / 6.0;
    return value[n - 1] + (t - x[n - 1]) * slope;
  }
  const auto it = std::upper_bound(x.begin(), x.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
  const double h = x[i + 1] - x[i];
  const double a = t - x[i];
  const double b = x[i + 1] - t;
  return (b * value[i] + a * value[i + 1]) / h -
         a * b / 6.0 * ((1.0 + a / h) * second[i + 1] + (1.0 + b / h) * second[i]);
}

double roughness(const SplineFit& fit) {
  double r = 0.0;
  for (std::size_t i = 0; i + 1 < fit.x.size(); ++i) {
    const double h = fit.x[i + 1] - fit.x[i];
    const double a = fit.second[i];
    const double b = fit.second[i + 1];
    r += h * (a * a + a * b + b * b) / 3.0;
  }
  return r;
}

double spline_objective(const SplineFit& fit, std::span<const Point> points, double lambda) {
  double rss = 0.0;
  for (const auto& p : points) {
    const double e = p.y - fit(p.x);
    rss += p.w * e * e;
  }
  return rss + lambda * roughness(fit);
}

SplineFit smoothing_spline(std::vector<Point> points, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw FlightError(ErrorCode::BadInput, "lambda must be finite and >= 0");
  }
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !(p.w > 0.0)) {
      throw FlightError(ErrorCode::BadInput, "points need finite x, y and positive weight");
    }
  }
  std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
  // Merge duplicate abscissae into weighted means.
  std::vector<double> x, y, w;
  for (const auto& p : points) {
    if (!x.empty() && p.x == x.back()) {
      y.back() = (y.back() * w.back() + p.y * p.w) / (w.back() + p.w);
      w.back() += p.w;
      continue;
    }
    x.push_back(p.x);
    y.push_back(p.y);
    w.push_back(p.w);
  }
  const std::size_t n = x.size();
  if (n < 4) {
    throw FlightError(ErrorCode::DegenerateAbscissae, "need at least 4 distinct x, got " + std::to_string(n));
  }

  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];

  // Q is n x (n-2): column j (interior knot j+1) has entries at rows j, j+1, j+2.
  const std::size_t m = n - 2;
  auto q = [&](std::size_t row, std::size_t col) -> double {
    const std::size_t k = col + 1;  // knot index of this column
    if (row == k - 1) return 1.0 / h[k - 1];
    if (row == k) return -1.0 / h[k - 1] - 1.0 / h[k];
    if (row == k + 1) return 1.0 / h[k];
    return 0.0;
  };

  // A = R + lambda Q^T W^-1 Q, symmetric pentadiagonal; band[j][d] = A(j, j-d).
  std::vector<std::array<double, 3>> band(m, {0.0, 0.0, 0.0});
  for (std::size_t j = 0; j < m; ++j) {
    band[j][0] = (h[j] + h[j + 1]) / 3.0;
    if (j >= 1) band[j][1] = h[j] / 6.0;
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t d = 0; d <= 2 && d <= j; ++d) {
      const std::size_t k = j - d;
      double s = 0.0;
      for (std::size_t row = j; row <= k + 2; ++row) s += q(row, j) * q(row, k) / w[row];
      band[j][d] += lambda * s;
    }
  }

  // Banded Cholesky, A = L L^T with the same band.
  std::vector<std::array<double, 3>> L(m, {0.0, 0.0, 0.0});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t d = std::min<std::size_t>(2, j) + 1; d-- > 0;) {
      const std::size_t k = j - d;
      double s = band[j][d];
      for (std::size_t p = (j >= 2 ? j - 2 : 0); p < k; ++p) s -= L[j][j - p] * L[k][k - p];
      if (d == 0) {
        if (!(s > 0.0)) throw FlightError(ErrorCode::DegenerateAbscissae, "spline system is not positive definite");
        L[j][0] = std::sqrt(s);
      } else {
        L[j][d] = s / L[k][0];
      }
    }
  }

  std::vector<double> rhs(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t row = j; row <= j + 2; ++row) rhs[j] += q(row, j) * y[row];
  }
  std::vector<double> z(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = rhs[j];
    for (std::size_t p = (j >= 2 ? j - 2 : 0); p < j; ++p) s -= L[j][j - p] * z[p];
    z[j] = s / L[j][0];
  }
  std::vector<double> gamma(m);
  for (std::size_t j = m; j-- > 0;) {
    double s = z[j];
    for (std::size_t p = j + 1; p <= j + 2 && p < m; ++p) s -= L[p][p - j] * gamma[p];
    gamma[j] = s / L[j][0];
  }

  SplineFit fit;
  fit.lambda = lambda;
  fit.x = x;
  fit.value = y;
  fit.second.assign(n, 0.0);
  for (std::size_t j = 0; j < m; ++j) fit.second[j + 1] = gamma[j];
  if (lambda > 0.0) {
    for (std::size_t row = 0; row < n; ++row) {
      double qg = 0.0;
      for (std::size_t j = (row >= 2 ? row - 2 : 0); j <= row && j < m; ++j) qg += q(row, j) * gamma[j];
      fit.value[row] = y[row] - lambda * qg / w[row];
    }
  }
  return fit;
}

LambdaChoice choose_lambda_loo(std::span<const Point> points) {
  std::vector<double> xs;
  for (const auto& p : points) xs.push_back(p.x);
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  if (xs.size() < 5) {
    throw FlightError(ErrorCode::DegenerateAbscissae, "leave-one-out needs at least 5 distinct x");
  }
  const double range = xs.back() - xs.front();
  const double scale = range * range * range;

  LambdaChoice best{0.0, std::numeric_limits<double>::infinity()};
  for (int k = -24; k <= 24; ++k) {
    const double lambda = scale * std::pow(10.0, k / 4.0);
    double err = 0.0;
    for (double held : xs) {
      std::vector<Point> rest;
      double target = 0.0, weight = 0.0;
      for (const auto& p : points) {
        if (p.x == held) {
          target += p.y * p.w;
          weight += p.w;
        } else {
          rest.push_back(p);
        }
      }
      const auto fit = smoothing_spline(rest, lambda);
      const double e = target / weight - fit(held);
      err += weight * e * e;
    }
    err /= static_cast<double>(xs.size());
    if (err < best.loo_error) best = {lambda, err};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Phase averaging

std::vector<std::int64_t> period_starts(const std::vector<ctl::SyncEvent>& events, Anchor anchor) {
  std::vector<std::int64_t> out;
  for (const auto& e : events) {
    const bool rising = e.kind == ctl::SyncKind::Edge && e.new_duty > e.old_duty;
    const bool cycle = e.kind == ctl::SyncKind::Start || (e.kind != ctl::SyncKind::Start && e.new_duty < e.old_duty);
    if (anchor == Anchor::Rising ? rising : cycle) out.push_back(e.timestamp_us);
  }
  return out;
}

namespace {

double sample_at(std::span<const std::int64_t> t, std::span<const double> v, double at, Resample mode) {
  // Last sample at or before `at`, with a sub-microsecond tolerance.
  const auto it = std::upper_bound(t.begin(), t.end(), at + 1e-3,
                                   [](double a, std::int64_t b) { return a < static_cast<double>(b); });
  if (it == t.begin()) return v.front();
  const std::size_t i = static_cast<std::size_t>(it - t.begin()) - 1;
  if (mode == Resample::Hold || i + 1 >= t.size() || static_cast<double>(t[i]) >= at) return v[i];
  const double u = (at - static_cast<double>(t[i])) / static_cast<double>(t[i + 1] - t[i]);
  return v[i] + u * (v[i + 1] - v[i]);
}

}  // namespace

PhaseAverage gust_align(std::span<const std::int64_t> t_us, std::span<const double> values,
                        const std::vector<ctl::SyncEvent>& events, const AlignOptions& options) {
  if (t_us.size() != values.size() || t_us.empty()) {
    throw FlightError(ErrorCode::BadInput, "time and value series must be non-empty and equally long");
  }
  if (options.bins < 2) throw FlightError(ErrorCode::BadInput, "need at least 2 phase bins");
  const auto starts = period_starts(events, options.anchor);
  std::vector<std::pair<std::int64_t, std::int64_t>> segments;
  for (std::size_t k = 0; k + 1 < starts.size(); ++k) {
    if (starts[k] < t_us.front() || starts[k + 1] > t_us.back()) continue;
    segments.emplace_back(starts[k], starts[k + 1]);
  }
  if (segments.size() < 2) {
    throw FlightError(ErrorCode::InsufficientPeriods,
                      "found " + std::to_string(segments.size()) + " complete period(s), need 2");
  }

  PhaseAverage out;
  out.segments = static_cast<int>(segments.size());
  const auto bins = static_cast<std::size_t>(options.bins);
  std::vector<std::vector<double>> table(bins);
  double total = 0.0;
  for (const auto& [a, b] : segments) {
    const double len = static_cast<double>(b - a);
    total += len;
    for (std::size_t j = 0; j < bins; ++j) {
      const double at = static_cast<double>(a) + len * static_cast<double>(j) / static_cast<double>(bins);
      table[j].push_back(sample_at(t_us, values, at, options.resample));
    }
  }
  out.period_s = total / static_cast<double>(segments.size()) * 1e-6;
  for (std::size_t j = 0; j < bins; ++j) {
    const auto& col = table[j];
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    out.phase.push_back(static_cast<double>(j) / static_cast<double>(bins));
    out.mean.push_back(mean);
    out.std.push_back(std::sqrt(ss / static_cast<double>(col.size() - 1)));
  }
  return out;
}

LagResult response_lag(std::span<const double> command, std::span<const double> response, double sample_rate_hz,
                       double period_s) {
  if (command.size() != response.size() || command.size() < 4) {
    throw FlightError(ErrorCode::BadInput, "command and response need equal length >= 4");
  }
  if (!(sample_rate_hz > 0) || !(period_s > 0)) throw FlightError(ErrorCode::BadInput, "rate and period must be > 0");
  const std::size_t n = command.size();
  const auto max_lag = static_cast<std::size_t>(std::ceil(period_s * sample_rate_hz - 1e-9));
  if (static_cast<double>(n) < 2.0 * period_s * sample_rate_hz - 0.5) {
    throw FlightError(ErrorCode::InsufficientPeriods, "series must cover at least 2 periods");
  }
  auto variance = [](std::span<const double> s) {
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    double ss = 0.0;
    for (double v : s) ss += (v - mean) * (v - mean);
    return std::pair{ss / static_cast<double>(s.size()), mean};
  };
  const auto [rv, rm] = variance(response);
  if (rv <= 1e-12 * std::max(1.0, rm * rm)) throw FlightError(ErrorCode::FlatSignal, "response variance is ~0");
  const auto [cv, cm] = variance(command);
  if (cv <= 1e-12 * std::max(1.0, cm * cm)) throw FlightError(ErrorCode::FlatSignal, "command variance is ~0");

  LagResult best{0.0, -2.0};
  for (std::size_t lag = 0; lag < max_lag && lag + 2 < n; ++lag) {
    const std::size_t m = n - lag;
    double sc = 0.0, sr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sc += command[i];
      sr += response[i + lag];
    }
    sc /= static_cast<double>(m);
    sr /= static_cast<double>(m);
    double cov = 0.0, vc = 0.0, vr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = command[i] - sc;
      const double b = response[i + lag] - sr;
      cov += a * b;
      vc += a * a;
      vr += b * b;
    }
    if (vc <= 0.0 || vr <= 0.0) continue;
    const double r = cov / std::sqrt(vc * vr);
    if (r > best.peak) best = {static_cast<double>(lag) / sample_rate_hz, r};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tables

std::string condition_stats_csv(const std::vector<ConditionStats>& rows, std::string_view field_name) {
  std::ostringstream out;
  out << "# gustwall-boxstats v1\n# field " << field_name << "\n# quartiles type-7\n";
  out << "condition,n,min,q1,median,q3,max,mean\n";
  for (const auto& r : rows) {
    const auto& b = r.stats;
    out << format_double(r.condition) << ',' << b.n;
    for (double v : {b.min, b.q1, b.median, b.q3, b.max, b.mean}) out << ',' << format_sig(v, 10);
    out << '\n';
  }
  return out.str();
}

std::string spline_csv(const SplineFit& fit, int samples) {
  std::ostringstream out;
  out << "# gustwall-spline v1\n# lambda " << format_double(fit.lambda) << "\nx,fit\n";
  const double a = fit.x.front();
  const double b = fit.x.back();
  for (int i = 0; i < samples; ++i) {
    const double t = samples == 1 ? a : a + (b - a) * i / (samples - 1);
    out << format_sig(t, 10) << ',' << format_sig(fit(t), 10) << '\n';
  }
  return out.str();
}

std::string phase_csv(const std::vector<std::pair<std::string, PhaseAverage>>& columns) {
  std::ostringstream out;
  out << "# gustwall-phase v1\n";
  if (columns.empty()) return out.str();
  const auto& first = columns.front().second;
  out << "# segments " << first.segments << "\n# period_s " << format_sig(first.period_s, 10) << "\nbin,phase";
  for (const auto& [name, _] : columns) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (std::size_t j = 0; j < first.phase.size(); ++j) {
    out << j << ',' << format_double(first.phase[j]);
    for (const auto& [_, pa] : columns) out << ',' << format_sig(pa.mean[j], 10) << ',' << format_sig(pa.std[j], 10);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

std::string_view to_string(Vehicle v) { return v == Vehicle::Flapper ? "flapper" : "crazyflie"; }

std::array<double, 6> fixture_power_means(Vehicle v) {
  // Flapper dips to its lowest draw at 2.7 m/s; the quadrotor stays near 8.8 W.
  if (v == Vehicle::Flapper) return {15.9, 14.6, 13.6, 13.0, 12.7, 13.3};
  return {8.7, 8.8, 8.8, 8.9, 8.8, 8.8};
}

std::array<double, 6> fixture_pitch_means(Vehicle v) {
  if (v == Vehicle::Flapper) return {6.0, 10.0, 14.0, 18.0, 22.0, 27.0};
  return {2.0, 4.0, 7.0, 10.0, 13.0, 17.0};
}

double fixture_response_tau(Vehicle v) { return v == Vehicle::Flapper ? 0.6 : 0.25; }

namespace {

struct VehicleNoise {
  double nominal_voltage;
  double power_sd;
  double pitch_sd;
};

VehicleNoise noise_for(Vehicle v) {
  if (v == Vehicle::Flapper) return {7.4, 0.6, 2.0};
  return {3.7, 0.25, 1.0};
}

// n normal draws shifted to have sample mean exactly 0 (up to rounding).
std::vector<double> centred_normal(std::mt19937_64& rng, std::size_t n, double sd) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  for (auto& x : v) x -= mean;
  return v;
}

}  // namespace

std::vector<FlightRecord> synth_steady_flight(Vehicle v, std::uint64_t seed, int samples_per_group) {
  if (samples_per_group < 5) throw FlightError(ErrorCode::TooFewSamples, "need at least 5 samples per group");
  std::mt19937_64 rng(seed);
  const auto power = fixture_power_means(v);
  const auto pitch = fixture_pitch_means(v);
  const auto nz = noise_for(v);
  std::normal_distribution<double> small(0.0, 0.01);
  std::vector<FlightRecord> out;
  const auto n = static_cast<std::size_t>(samples_per_group);
  std::int64_t t = 0;
  for (std::size_t g = 0; g < kSweepSpeeds.size(); ++g) {
    const auto dp = centred_normal(rng, n, nz.power_sd);
    const auto dpitch = centred_normal(rng, n, nz.pitch_sd);
    for (std::size_t i = 0; i < n; ++i) {
      FlightRecord r;
      r.timestamp_us = t;
      t += 10'000;
      r.x = -0.02 * kSweepSpeeds[g] + small(rng);
      r.y = small(rng);
      r.z = 1.0 + small(rng);
      r.roll = 0.5 * small(rng) * 100.0;
      r.pitch = pitch[g] + dpitch[i];
      r.yaw = small(rng) * 100.0;
      // Slow sag plus ripple; current follows from the target power.
      r.voltage = nz.nominal_voltage * (1.0 - 0.02 * static_cast<double>(out.size()) / (6.0 * n)) + small(rng);
      r.current = (power[g] + dp[i]) / r.voltage;
      r.condition = kSweepSpeeds[g];
      out.push_back(r);
    }
  }
  return out;
}

GustFlight synth_gust_flight(Vehicle v, double frequency_hz, double duration_s, std::uint64_t seed,
                             double record_rate_hz) {
  ctl::GustProfile profile;
  profile.kind = ctl::ProfileKind::Square;
  profile.unit = ctl::Unit::Speed;
  profile.lo = 1.3;
  profile.hi = 3.4;
  profile.frequency_hz = frequency_hz;
  profile.duration_s = duration_s;
  const auto calib = calib::default_calibration();
  const auto schedule = ctl::compile_profile(profile, calib);

  // Run the controller against a sink that drops frames; the events are what
  // a live run would have logged.
  struct NullSink : ctl::FrameSink {
    void send(int, const proto::Bytes&) override {}
  } sink;
  ctl::SessionOptions so;
  ctl::Session session(schedule, calib, so, sink);
  const ctl::TelemetrySnapshot quiet;
  while (!session.done_ticking()) session.step(quiet, session.tick_time_us(session.next_tick()));
  session.stop(ctl::SessionStatus::Completed, quiet, session.tick_time_us(session.next_tick()));

  GustFlight out;
  out.events = session.result().events;
  std::mt19937_64 rng(seed);
  const auto nz = noise_for(v);
  std::normal_distribution<double> pitch_noise(0.0, 0.3 * nz.pitch_sd);
  std::normal_distribution<double> power_noise(0.0, 0.5 * nz.power_sd);
  std::normal_distribution<double> small(0.0, 0.005);

  const double tau = fixture_response_tau(v);
  const auto pitch_means = fixture_pitch_means(v);
  const auto power_means = fixture_power_means(v);
  auto interp = [](const std::array<double, 6>& ys, double s) {
    if (s <= kSweepSpeeds.front()) return ys.front();
    for (std::size_t i = 1; i < kSweepSpeeds.size(); ++i) {
      if (s <= kSweepSpeeds[i]) {
        const double u = (s - kSweepSpeeds[i - 1]) / (kSweepSpeeds[i] - kSweepSpeeds[i - 1]);
        return ys[i - 1] + u * (ys[i] - ys[i - 1]);
      }
    }
    return ys.back();
  };

  const auto n = static_cast<std::size_t>(std::llround(duration_s * record_rate_hz)) + 1;
  const double dt = 1.0 / record_rate_hz;
  const double alpha = -std::expm1(-dt / tau);
  double felt = profile.lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double cmd = std::fmod(t * frequency_hz, 1.0) < 0.5 ? profile.lo : profile.hi;
    if (i > 0) felt += alpha * (cmd - felt);
    FlightRecord r;
    r.timestamp_us = std::llround(t * 1e6);
    r.x = -0.05 * felt + small(rng);
    r.y = small(rng);
    r.z = 1.0 + small(rng);
    r.pitch = interp(pitch_means, felt) + pitch_noise(rng);
    r.voltage = nz.nominal_voltage + small(rng);
    r.current = (interp(power_means, felt) + power_noise(rng)) / r.voltage;
    r.condition = frequency_hz;
    out.records.push_back(r);
    out.command_speed.push_back(cmd);
  }
  return out;
}

}  // namespace gustwall::flightlab
