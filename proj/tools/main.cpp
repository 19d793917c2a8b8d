#include "triplet_debias/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    return triplet_debias::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
