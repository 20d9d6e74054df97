#include <iostream>

#include "acmseg/harness.hpp"

int main(int argc, char** argv) { return acm::harness::run_cli(argc, argv, std::cout, std::cerr); }
