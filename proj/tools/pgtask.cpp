#include "pgtask/cli.hpp"

int main(int argc, char** argv) { return pgtask::cli::run_cli(argc, argv); }
