#include "edib/cli.hpp"

int main(int argc, char** argv) { return edib::cli::cli_main(argc, argv); }
