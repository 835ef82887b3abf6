#include "cli.hpp"

int main(int argc, char** argv) { return rbdsde::cli::main(argc, argv); }
