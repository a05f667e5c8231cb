#include "icse/cli.hpp"

int main(int argc, char** argv) { return icse::cli::run(argc, argv); }
