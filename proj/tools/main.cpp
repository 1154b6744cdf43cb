#include <iostream>
#include <string>
#include <vector>

#include "p3d/cli.h"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return p3d::dispatch(args, std::cout, std::cerr);
}
