#include "cli.hpp"

int main(int argc, char** argv) {
  return fpba::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
