#include <iostream>

#include "camp/cli.hpp"

int main(int argc, char** argv) {
    return camp::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
