#include <iostream>

#include "vqadiff/commands.hpp"

int main(int argc, char** argv) { return vqadiff::run_cli(argc, argv, std::cout, std::cerr); }
