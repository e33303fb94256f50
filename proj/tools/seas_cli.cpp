#include <iostream>

#include "seas/cli.hpp"

int main(int argc, char** argv) {
  return seas::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
