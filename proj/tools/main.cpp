#include <iostream>

#include "cforest/cli.hpp"

int main(int argc, char** argv) { return cforest::cli::run({argv + 1, argv + argc}, std::cout, std::cerr); }
