#include <iostream>

#include "lsseg/cli.hpp"

int main(int argc, char** argv) { return lsseg::run_cli(argc, argv, std::cout, std::cerr); }
