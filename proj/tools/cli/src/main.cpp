#include <iostream>

#include "thz/cli.hpp"

int main(int argc, char** argv) {
  return thz::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
