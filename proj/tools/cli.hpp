#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include "xlf/error.hpp"

namespace xlf::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_other = 1;
inline constexpr int exit_config = 2;
inline constexpr int exit_data = 3;
inline constexpr int exit_remote = 4;

int exit_code(ErrorKind kind) noexcept;

/// Runs one subcommand. args excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace xlf::cli
