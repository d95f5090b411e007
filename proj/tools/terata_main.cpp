#include <string>
#include <vector>

#include "terata/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return terata::run_cli(args);
}
