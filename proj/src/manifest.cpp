#include "gustwall/manifest.hpp"

#include "gustwall/util.hpp"
#include "gustwall/version.hpp"
#include "json.hpp"

namespace gustwall {

using nlohmann::json;

std::string file_hash(const std::filesystem::path& path) {
  try {
    return hex64(fnv1a64(read_file(path)));
  } catch (const std::exception&) {
    return {};
  }
}

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  json inputs = json::array();
  for (const auto& p : m.inputs) inputs.push_back({{"path", p.string()}, {"fnv1a64", file_hash(p)}});
  json outputs = json::array();
  for (const auto& p : m.outputs) outputs.push_back({{"path", p.string()}, {"fnv1a64", file_hash(dir / p)}});
  json j = {
      {"format", "gustwall-manifest v1"},
      {"tool", "gustwall"},
      {"version", kVersion},
      {"subcommand", m.subcommand},
      {"config_hash", m.config_hash},
      {"calib_hash", m.calib_hash},
      {"seed", m.seed},
      {"started_utc", m.started_utc},
      {"finished_utc", m.finished_utc.empty() ? utc_iso8601() : m.finished_utc},
      {"inputs", inputs},
      {"outputs", outputs},
  };
  const json extra = json::parse(m.extra_json);
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) j[k] = v;
  }
  write_file_atomic(dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace gustwall
