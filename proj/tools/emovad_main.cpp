#include <string>
#include <vector>

#include "emovad/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return emovad::cli::run_cli(args);
}
