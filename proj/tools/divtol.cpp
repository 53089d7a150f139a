#include <iostream>

#include "divtol/cli.hpp"

int main(int argc, char** argv) {
  return divtol::cli::run(argc, argv, std::cout, std::cerr);
}
