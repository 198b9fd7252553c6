#include <iostream>

#include "opid/cli.hpp"

int main(int argc, char** argv) { return opid::run_cli(argc, argv, std::cout, std::cerr); }
