#include <iostream>

#include "dcat/cli.hpp"

int main(int argc, char** argv) { return dcat::run_cli(argc, argv, std::cout, std::cerr); }
