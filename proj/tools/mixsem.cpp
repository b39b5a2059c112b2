#include "mixsem/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return mixsem::run_cli(argc, argv, std::cout, std::cerr);
}
