#include <iostream>

#include "gazedistill_cli/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gazedistill::cli::run(args, std::cout, std::cerr);
}
