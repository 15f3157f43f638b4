#include <iostream>
#include <string>
#include <vector>

#include "cbam/cli.hpp"

int main(int argc, char** argv) {
  return cbam::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
