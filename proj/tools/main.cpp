#include <string>
#include <vector>

#include "lcmflow/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lcmflow::cli::run(args);
}
