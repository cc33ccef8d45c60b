#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "spslu/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return spslu::run_cli(args, std::cout, std::cerr, std::cin);
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 70;
  }
}
