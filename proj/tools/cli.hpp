#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "eegbridge/error.hpp"

namespace eegbridge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// 1 for bad input or configuration, 2 for failures while computing.
int exit_code(ErrorCode code);

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct SelftestReport {
  int passed = 0;
  int total = 0;
  std::vector<std::string> failed;
};

// Small closed-form checks of every module; one line per check on `log`.
SelftestReport run_selftest(std::ostream& log);

}  // namespace eegbridge::cli
