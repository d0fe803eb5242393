#include <vector>

#include "sanet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sanet::cli_run(args);
}
