#include "fits/cli.hpp"

int main(int argc, char** argv) { return fits::cli::run(argc, argv); }
