#pragma once

#include "codeccap/config.hpp"

#include <ostream>

namespace codeccap {

/// Runs one subcommand. Returns the process exit status: 0 success, 1 input or
/// validation error, 2 backend or transport error, 3 internal error. Errors are
/// also written to `err` as one JSON line.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
             const Config::EnvLookup& env);

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace codeccap
