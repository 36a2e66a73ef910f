#include "codeccap/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return codeccap::dispatch(argc, argv, std::cout, std::cerr); }
