#include <string>
#include <vector>

#include "nbpl/cli.hpp"

int main(int argc, char** argv) {
  return nbpl::cli::run_cli(std::vector<std::string>(argv, argv + argc));
}
