#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gustwall/calib.hpp"
#include "gustwall/ctl.hpp"
#include "gustwall/flightlab.hpp"
#include "gustwall/flowlab.hpp"
#include "gustwall/proto.hpp"
#include "gustwall/sim.hpp"
#include "gustwall/util.hpp"
#include "gustwall/version.hpp"

namespace py = pybind11;
using namespace gustwall;

namespace {

calib::Calibration calibration_from(const std::string& path) {
  return path.empty() ? calib::default_calibration() : calib::load(path);
}

py::dict frame_dict(const proto::Frame& f) {
  py::dict d;
  d["type"] = std::string(proto::to_string(f.type));
  d["module"] = f.module_index;
  d["seq"] = f.seq;
  d["timestamp_us"] = f.timestamp_us;
  if (const auto* p = std::get_if<proto::SetPwmPayload>(&f.payload)) {
    std::vector<double> duty;
    for (auto w : p->duties) duty.push_back(proto::duty_from_wire(w));
    d["duty"] = duty;
  } else if (const auto* t = std::get_if<proto::TachPayload>(&f.payload)) {
    d["rpm"] = std::vector<int>(t->rpms.begin(), t->rpms.end());
  }
  return d;
}

py::bytes to_bytes(const proto::Bytes& b) { return {reinterpret_cast<const char*>(b.data()), b.size()}; }

proto::Bytes from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::dict event_dict(const ctl::SyncEvent& e) {
  py::dict d;
  d["timestamp_us"] = e.timestamp_us;
  d["kind"] = std::string(ctl::to_string(e.kind));
  d["old_duty"] = e.old_duty;
  d["new_duty"] = e.new_duty;
  d["phase"] = e.phase;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gustwall, m) {
  m.doc() = "gustwall core: wire protocol, emulated wall, controller, flow and flight analysis";
  m.attr("__version__") = std::string(kVersion);

  py::register_exception<Error>(m, "GustwallError", PyExc_ValueError);

  // protocol
  m.def("encode_set_pwm", [](int module, std::uint32_t seq, std::uint64_t ts, const std::vector<double>& duty) {
    if (duty.size() != proto::kFansPerModule) throw py::value_error("need 9 duties");
    std::array<std::uint16_t, proto::kFansPerModule> w{};
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = proto::duty_to_wire(duty[i]);
    return to_bytes(proto::encode_frame(proto::make_set_pwm(static_cast<std::uint8_t>(module), seq, ts, w)));
  }, py::arg("module"), py::arg("seq"), py::arg("timestamp_us"), py::arg("duty"));
  m.def("encode_ping", [](int module, std::uint32_t seq, std::uint64_t ts) {
    return to_bytes(proto::encode_frame(proto::make_ping(static_cast<std::uint8_t>(module), seq, ts)));
  }, py::arg("module"), py::arg("seq"), py::arg("timestamp_us"));
  m.def("decode_frame", [](const py::bytes& b) {
    const auto r = proto::decode_frame(from_bytes(b));
    if (const auto* code = std::get_if<proto::ErrorCode>(&r)) throw py::value_error(std::string(proto::to_string(*code)));
    return frame_dict(std::get<proto::Frame>(r));
  }, "Decode one datagram; raises ValueError naming the rejection reason.");
  m.def("crc16", [](const py::bytes& b) { return proto::crc16(from_bytes(b)); });

  // calibration
  m.def("default_calibration_csv", [] { return calib::to_csv(calib::default_calibration()); });
  m.def("speed_to_duty", [](double speed, const std::string& calib_path) {
    const auto r = calib::speed_to_duty(calibration_from(calib_path), speed);
    return py::make_tuple(r.duty, r.clamped);
  }, py::arg("speed"), py::arg("calib") = "");
  m.def("speed_for_duty", [](double duty, const std::string& calib_path) {
    return calibration_from(calib_path).speed_for_duty(duty);
  }, py::arg("duty"), py::arg("calib") = "");

  // sessions on the simulated clock
  m.def("simulate", [](const std::string& profile_json, double duration, bool closed_loop, std::uint64_t seed,
                       const std::vector<std::pair<int, double>>& kills, const std::string& out,
                       const std::string& calib_path) {
    const auto cal = calibration_from(calib_path);
    const auto schedule = ctl::compile_profile(ctl::parse_profile(profile_json), cal);
    sim::SimRunOptions o;
    o.session.duration_s = duration;
    o.session.closed_loop = closed_loop;
    o.session.seed = seed;
    o.emulator.seed = seed;
    for (auto [module, t] : kills) o.kills.push_back({module, static_cast<std::int64_t>(t * 1e6)});
    sim::SimRunResult r;
    {
      py::gil_scoped_release release;
      r = sim::run_session_sim(schedule, cal, o);
    }
    py::dict d;
    d["status"] = std::string(ctl::to_string(r.session.status));
    py::list events;
    for (const auto& e : r.session.events) events.append(event_dict(e));
    d["events"] = events;
    std::vector<std::int64_t> t;
    std::vector<std::vector<double>> duty, rpm;
    for (const auto& rec : r.session.records) {
      t.push_back(rec.timestamp_us);
      duty.emplace_back(rec.duty.begin(), rec.duty.end());
      rpm.emplace_back(rec.measured_rpm.begin(), rec.measured_rpm.end());
    }
    d["timestamp_us"] = t;
    d["duty"] = duty;
    d["rpm"] = rpm;
    std::vector<int> silent;
    for (int i = 0; i < proto::kModules; ++i)
      if (r.session.silent_modules.test(static_cast<std::size_t>(i))) silent.push_back(i);
    d["silent_modules"] = silent;
    d["final_duty"] = std::vector<double>(r.final_duties.begin(), r.final_duties.end());
    if (!out.empty()) {
      ctl::RunInfo info;
      info.subcommand = "sim";
      info.calib_hash = calib::calibration_hash(cal);
      d["run_dir"] = ctl::write_run_directory(out, schedule, o.session, r.session, info).string();
    }
    return d;
  }, py::arg("profile_json"), py::arg("duration") = 0.0, py::arg("closed_loop") = false, py::arg("seed") = 1,
     py::arg("kills") = std::vector<std::pair<int, double>>{}, py::arg("out") = "", py::arg("calib") = "",
     "Run a wind program against the in-process emulated wall. kills is a list of (module, seconds).");

  // flow analysis
  m.def("lowpass", [](const std::vector<double>& x, double fs, double fc) { return flowlab::lowpass(x, fs, fc); },
        py::arg("samples"), py::arg("sample_rate"), py::arg("cutoff") = flowlab::kDefaultCutoffHz,
        "Zero-phase second-order Butterworth low-pass (forward and backward).");
  m.def("flow_stats", [](const std::vector<double>& x) {
    const auto s = flowlab::flow_stats(x);
    py::dict d;
    d["mean"] = s.mean;
    d["std"] = s.std;
    d["ti"] = s.ti_defined ? py::cast(s.ti) : py::none();
    return d;
  });
  m.def("analyze_flow_log", [](const std::filesystem::path& csv, bool permissive) {
    flowlab::AnalyzeOptions o;
    o.permissive = permissive;
    const auto r = flowlab::analyze_log(flowlab::load_log(csv), o);
    py::list rows;
    for (const auto& s : r.sensors) {
      py::dict d;
      d["sensor"] = s.sensor_id;
      if (s.stats) {
        d["mean"] = s.stats->mean;
        d["std"] = s.stats->std;
        d["ti"] = s.stats->ti_defined ? py::cast(s.stats->ti) : py::none();
      } else {
        d["error"] = s.error;
      }
      rows.append(d);
    }
    return rows;
  }, py::arg("path"), py::arg("permissive") = false);

  // flight analysis
  py::class_<flightlab::SplineFit>(m, "SplineFit")
      .def_readonly("x", &flightlab::SplineFit::x)
      .def_readonly("value", &flightlab::SplineFit::value)
      .def_readonly("second", &flightlab::SplineFit::second)
      .def_readonly("lam", &flightlab::SplineFit::lambda)
      .def("__call__", [](const flightlab::SplineFit& f, double t) { return f(t); })
      .def("__call__", [](const flightlab::SplineFit& f, const std::vector<double>& t) {
        std::vector<double> y;
        for (double v : t) y.push_back(f(v));
        return y;
      });
  m.def("smoothing_spline", [](const std::vector<double>& x, const std::vector<double>& y, double lam,
                               std::vector<double> w) {
    if (x.size() != y.size() || (!w.empty() && w.size() != x.size())) throw py::value_error("length mismatch");
    std::vector<flightlab::Point> pts;
    for (std::size_t i = 0; i < x.size(); ++i) pts.push_back({x[i], y[i], w.empty() ? 1.0 : w[i]});
    return flightlab::smoothing_spline(pts, lam);
  }, py::arg("x"), py::arg("y"), py::arg("lam"), py::arg("w") = std::vector<double>{});
  m.def("choose_lambda", [](const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<flightlab::Point> pts;
    for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) pts.push_back({x[i], y[i], 1.0});
    const auto c = flightlab::choose_lambda_loo(pts);
    return py::make_tuple(c.lambda, c.loo_error);
  }, "Leave-one-out lambda; returns (lambda, loo_error).");
  m.def("condition_stats", [](const std::filesystem::path& csv, const std::string& field) {
    if (field != "pitch" && field != "power") throw py::value_error("field is pitch or power");
    const auto rows = flightlab::condition_stats(flightlab::load_flight_csv(csv),
                                                 field == "pitch" ? flightlab::Field::Pitch : flightlab::Field::Power);
    py::list out;
    for (const auto& r : rows) {
      py::dict d;
      d["condition"] = r.condition;
      d["min"] = r.stats.min;
      d["q1"] = r.stats.q1;
      d["median"] = r.stats.median;
      d["q3"] = r.stats.q3;
      d["max"] = r.stats.max;
      d["mean"] = r.stats.mean;
      d["n"] = r.stats.n;
      out.append(d);
    }
    return out;
  }, py::arg("path"), py::arg("field") = "power");
  m.def("gust_align", [](const std::vector<std::int64_t>& t, const std::vector<double>& v,
                         const std::filesystem::path& events_csv, int bins, bool hold) {
    flightlab::AlignOptions o;
    o.bins = bins;
    o.resample = hold ? flightlab::Resample::Hold : flightlab::Resample::Linear;
    const auto pa = flightlab::gust_align(t, v, ctl::parse_events_csv(read_file(events_csv)), o);
    py::dict d;
    d["phase"] = pa.phase;
    d["mean"] = pa.mean;
    d["std"] = pa.std;
    d["segments"] = pa.segments;
    d["period_s"] = pa.period_s;
    return d;
  }, py::arg("timestamp_us"), py::arg("values"), py::arg("events"), py::arg("bins") = 256, py::arg("hold") = false);
}
