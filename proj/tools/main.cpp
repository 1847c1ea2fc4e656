#include <string>
#include <vector>

#include "hblife/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hblife::cli::run(args);
}
