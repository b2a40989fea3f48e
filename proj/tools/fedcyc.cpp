#include <iostream>

#include "fedcyc/cli.hpp"

int main(int argc, char** argv) {
  return fedcyc::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
