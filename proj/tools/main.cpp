#include <iostream>

#include "topodef/cli.hpp"

int main(int argc, char** argv) { return topodef::run_cli(argc, argv, std::cout, std::cerr); }
