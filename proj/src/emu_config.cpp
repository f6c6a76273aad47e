#include <functional>
#include <map>
#include <string>

#include "gustwall/emu.hpp"
#include "gustwall/util.hpp"

namespace gustwall::emu {

namespace {

using Setter = std::function<void(EmulatorConfig&, std::string_view, std::size_t)>;

template <typename Group>
Setter real(Group EmulatorConfig::*group, double Group::*field) {
  return [=](EmulatorConfig& c, std::string_view v, std::size_t line) {
    (c.*group).*field = parse_double(v, line);
  };
}

template <typename Group>
Setter integer(Group EmulatorConfig::*group, int Group::*field) {
  return [=](EmulatorConfig& c, std::string_view v, std::size_t line) {
    (c.*group).*field = static_cast<int>(parse_int(v, line));
  };
}

std::string unquote(std::string_view v, std::size_t line) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  throw DataError("expected a quoted string", line);
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](EmulatorConfig& c, std::string_view v, std::size_t line) {
         const auto s = parse_int(v, line);
         if (s < 0) throw DataError("seed must be >= 0", line);
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"host", [](EmulatorConfig& c, std::string_view v, std::size_t line) { c.host = unquote(v, line); }},
      {"base_port", [](EmulatorConfig& c, std::string_view v, std::size_t line) {
         const auto p = parse_int(v, line);
         if (p < 1 || p > 65535 - 14) throw DataError("base_port out of range", line);
         c.base_port = static_cast<int>(p);
       }},
      {"geometry.width", real(&EmulatorConfig::geometry, &ArrayGeometry::width)},
      {"geometry.height", real(&EmulatorConfig::geometry, &ArrayGeometry::height)},
      {"geometry.fan_pitch", real(&EmulatorConfig::geometry, &ArrayGeometry::fan_pitch)},
      {"fan.tau_s", real(&EmulatorConfig::endpoint, &EndpointConfig::tau_s)},
      {"fan.gain_spread", real(&EmulatorConfig::endpoint, &EndpointConfig::gain_spread)},
      {"endpoint.telemetry_rate_hz", real(&EmulatorConfig::endpoint, &EndpointConfig::telemetry_rate_hz)},
      {"endpoint.watchdog_s", real(&EmulatorConfig::endpoint, &EndpointConfig::watchdog_s)},
      {"plume.kernel_sigma_m", real(&EmulatorConfig::plume, &PlumeModel::kernel_sigma_m)},
      {"plume.taper_m", real(&EmulatorConfig::plume, &PlumeModel::taper_m)},
      {"plume.ti_core", real(&EmulatorConfig::plume, &PlumeModel::ti_core)},
      {"plume.ti_boundary", real(&EmulatorConfig::plume, &PlumeModel::ti_boundary)},
      {"plume.ti_core_radius", real(&EmulatorConfig::plume, &PlumeModel::ti_core_radius)},
      {"plume.ti_edge_radius", real(&EmulatorConfig::plume, &PlumeModel::ti_edge_radius)},
      {"plume.noise_cutoff_hz", real(&EmulatorConfig::plume, &PlumeModel::noise_cutoff_hz)},
      {"plume.transport_delay_s", real(&EmulatorConfig::plume, &PlumeModel::transport_delay_s)},
      {"plume.delay_floor_s", real(&EmulatorConfig::plume, &PlumeModel::delay_floor_s)},
      {"plume.delay_max_s", real(&EmulatorConfig::plume, &PlumeModel::delay_max_s)},
      {"plume.plane_distance_m", real(&EmulatorConfig::plume, &PlumeModel::plane_distance_m)},
  };
  return table;
}

}  // namespace

EmulatorConfig parse_emulator_config(std::string_view text) {
  EmulatorConfig config;
  std::string section;
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw DataError("unterminated section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw DataError("expected 'key = value'", line_no);
    const std::string key(trim(line.substr(0, eq)));
    const auto value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = setters().find(full);
    if (it == setters().end()) throw DataError("unknown config key '" + full + "'", line_no);
    it->second(config, value, line_no);
  }

  if (!(config.geometry.width > 0) || !(config.geometry.height > 0)) {
    throw EmuError(EmuError::Code::BadConfig, "geometry must have positive width and height");
  }
  if (!(config.endpoint.tau_s > 0) || !(config.endpoint.telemetry_rate_hz > 0) ||
      !(config.endpoint.watchdog_s > 0)) {
    throw EmuError(EmuError::Code::BadConfig, "tau, telemetry rate and watchdog must be > 0");
  }
  if (config.endpoint.gain_spread < 0 || config.endpoint.gain_spread >= 1) {
    throw EmuError(EmuError::Code::BadConfig, "fan.gain_spread must be in [0, 1)");
  }
  config.plume.validate();
  return config;
}

}  // namespace gustwall::emu
