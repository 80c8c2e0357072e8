#include <iostream>

#include "scoresync/cli.hpp"

int main(int argc, char** argv) { return scoresync::run_cli(argc, argv, std::cout, std::cerr); }
