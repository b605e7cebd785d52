#include <iostream>

#include "pidnet/commands.hpp"

int main(int argc, char** argv) { return pidnet::run_cli(argc, argv, std::cout, std::cerr); }
