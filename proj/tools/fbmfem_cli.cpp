#include <iostream>

#include "fbmfem/cli.hpp"

int main(int argc, char** argv) { return fbmfem::cli::run(argc, argv, std::cout, std::cerr); }
