#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

namespace spkr::cli {

// 0 success, 2 usage/config, 3 data/shape, 4 numeric, 1 anything else.
int exit_code_for(const std::exception &e);

// Runs the command line `args` (without the program name).
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

}  // namespace spkr::cli
