#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clipose/gradcheck.hpp"

namespace clipose::cli {

/// Overrides the default output directory; `--out` overrides this.
inline constexpr const char* kOutEnvVar = "CLIPOSE_OUT";
inline constexpr const char* kDefaultOut = "clipose-out";

/// Runs one subcommand. Returns 0 on success, 2 for usage or configuration
/// errors, 1 for any other failure. `args[0]` is the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

/// Finite-difference check of the whole dual encoder on a 4-pair batch at
/// reduced size (side 16, patch 4, d 8, max text length 8).
GradCheckReport joint_model_gradcheck(std::uint64_t seed);

}  // namespace clipose::cli
