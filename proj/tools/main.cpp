#include "eddpm/cli.hpp"

int main(int argc, char** argv) { return eddpm::cli::run(argc, argv); }
