#include "d2/cli/commands.hpp"

int main(int argc, char** argv) { return d2::cli::run(argc, argv); }
