#include <iostream>

#include "lava/cli.h"

int main(int argc, char** argv) { return lava::run_cli(argc, argv, std::cout, std::cerr); }
