#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gustwall/calib.hpp"
#include "gustwall/emu.hpp"

namespace gustwall::cli {

// Set by the subcommand's parse callback, run by main inside the error mapper.
using Action = std::function<int()>;

void add_session_commands(CLI::App& app, Action& action);   // emulate, run, sim, serve
void add_analysis_commands(CLI::App& app, Action& action);  // calib, flow, flight

// SIGINT / SIGTERM set this.
std::atomic<bool>& stop_requested();
void install_signal_handlers();

calib::Calibration load_calibration(const std::string& path);  // empty = built-in
emu::EmulatorConfig load_emulator_config(const std::string& path);  // empty = defaults

// "0-13,14" -> {0..14}; Usage error on anything outside 0..14.
std::vector<int> parse_module_list(const std::string& text);

std::filesystem::path ensure_dir(const std::filesystem::path& dir);

}  // namespace gustwall::cli
