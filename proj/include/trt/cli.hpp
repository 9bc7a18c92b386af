#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "trt/errors.hpp"

namespace trt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitContract = 4;

int exit_code(ErrorKind kind);
const char* error_tag(ErrorKind kind);

/// Runs one command line. Failures print a single "error[<tag>]: <detail>"
/// line to `err` and return a nonzero exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trt::cli
