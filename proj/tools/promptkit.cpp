#include <iostream>

#include "promptkit/cli.hpp"

int main(int argc, char** argv) { return promptkit::cli::run(argc, argv, std::cout, std::cerr); }
