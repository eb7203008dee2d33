#include <iostream>

#include "furrow/cli.hpp"

int main(int argc, char** argv) {
  return furrow::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout,
                             std::cerr);
}
