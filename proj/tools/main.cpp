#include "commands.hpp"

int main(int argc, char** argv) { return marac::cli::run_cli(argc, argv); }
