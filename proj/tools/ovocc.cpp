#include <iostream>

#include "ovocc/cli.hpp"

int main(int argc, char** argv) {
  return ovocc::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
