#include <iostream>

#include "blockasm/cli.hpp"

int main(int argc, char** argv) { return blockasm::run_cli(argc, argv, std::cout, std::cerr); }
