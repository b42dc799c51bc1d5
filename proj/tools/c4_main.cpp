#include "c4/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return c4::run_cli(argc, argv, std::cout, std::cerr); }
