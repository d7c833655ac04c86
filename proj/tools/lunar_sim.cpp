#include "lunar/cli.hpp"

int main(int argc, char** argv) { return lunar::cli::main_entry(argc, argv); }
