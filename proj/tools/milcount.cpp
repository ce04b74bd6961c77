#include <string>
#include <vector>

#include "milcount/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return milcount::cli::dispatch(args);
}
