#include <iostream>

#include "memwrap/cli.hpp"

int main(int argc, char** argv) { return memwrap::cli::run(argc, argv, std::cout, std::cerr); }
