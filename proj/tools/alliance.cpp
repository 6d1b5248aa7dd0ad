#include <iostream>

#include "alliance/app.hpp"

int main(int argc, char** argv) { return alliance::run_cli(argc, argv, std::cout, std::cerr); }
