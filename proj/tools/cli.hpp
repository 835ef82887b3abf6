#pragma once

// Experiment runner behind the `rbdsde` executable.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace rbdsde::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kQualityGate = 2 };

struct Invocation {
  std::string command;  // solve | study | field | verify
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

/// Runs one command; all diagnostics go to `log`, never to the artifacts.
int run(const Invocation& invocation, std::ostream& log);

/// Parses argv with CLI11 and dispatches to run().
int main(int argc, char** argv);

}  // namespace rbdsde::cli
