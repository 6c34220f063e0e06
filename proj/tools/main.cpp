#include "nblora/cli.hpp"

int main(int argc, char** argv) { return nblora::cli::run(argc, argv); }
