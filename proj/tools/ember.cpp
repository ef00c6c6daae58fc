#include <iostream>

#include "ember/cli.hpp"

int main(int argc, char** argv) { return ember::run_cli(argc, argv, std::cout, std::cerr); }
