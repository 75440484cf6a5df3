#pragma once

#include <string>
#include <vector>

namespace lesiongen {

/// Runs one subcommand. args[0] is the program name. Returns 0 on success,
/// 1 on usage/validation errors, 2 on runtime errors.
int run_command(const std::vector<std::string>& args);

}  // namespace lesiongen
