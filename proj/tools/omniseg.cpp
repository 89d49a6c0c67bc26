#include "omniseg/cli.hpp"

int main(int argc, char** argv) { return omniseg::cli::run(argc, argv); }
