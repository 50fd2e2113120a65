#pragma once

#include <string>
#include <vector>

namespace fits::cli {

// Runs one subcommand; returns the process exit code: 0 on success, 1 on
// usage/config errors, 2 on runtime failures. Errors are reported as a JSON
// object on stderr. FITS_SEED in the environment overrides the config seed.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace fits::cli
