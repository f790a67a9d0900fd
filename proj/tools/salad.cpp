#include "cli.hpp"

int main(int argc, char** argv) {
  return salad::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
