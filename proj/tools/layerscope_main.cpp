#include "layerscope/cli.hpp"

#include <exception>
#include <iostream>

int main(int argc, char** argv) {
  try {
    return layerscope::cli::run(argc, argv, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return layerscope::cli::kComputationFailed;
  }
}
