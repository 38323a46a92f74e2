#include <string>
#include <vector>

#include "cclip/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cclip::run_cli(std::move(args));
}
