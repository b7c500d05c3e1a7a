#include <string>
#include <vector>

#include "r3d/cli.hpp"

int main(int argc, char** argv) {
  return r3d::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
