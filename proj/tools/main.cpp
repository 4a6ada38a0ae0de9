#include <iostream>

#include "cli/cli.hpp"

int main(int argc, char** argv) {
  simtunnel::cli::setup_logging();
  return simtunnel::cli::run(argc, argv, std::cout, std::cerr);
}
