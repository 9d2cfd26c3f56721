#include <iostream>

#include "akt/cli.hpp"

int main(int argc, char** argv) { return akt::run_cli(argc, argv, std::cout, std::cerr); }
