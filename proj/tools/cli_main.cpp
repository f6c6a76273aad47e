#include <iostream>

#include "commands.hpp"
#include "gustwall/error.hpp"
#include "gustwall/version.hpp"

namespace {

int exit_code(gustwall::Error::Category category) {
  using C = gustwall::Error::Category;
  switch (category) {
    case C::Usage: return 2;
    case C::InputData: return 3;
    case C::Network: return 4;
    case C::Internal: return 1;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gustwall: fan-array wind tunnel controller, emulator and analysis tools"};
  app.set_version_flag("--version", gustwall::kVersion);
  app.require_subcommand(1);
  app.fallthrough(false);

  gustwall::cli::Action action;
  gustwall::cli::add_session_commands(app, action);
  gustwall::cli::add_analysis_commands(app, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (!action) return 2;
  try {
    return action();
  } catch (const gustwall::Error& e) {
    std::cerr << "gustwall: error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "gustwall: internal error: " << e.what() << "\n";
    return 1;
  }
}
