#include <iostream>
#include <string>
#include <vector>

#include "speakerprof/cli.hpp"

int main(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return spkr::cli::run_cli(args, std::cout, std::cerr);
}
