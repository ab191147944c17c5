#include "augsub/cli.hpp"

int main(int argc, char** argv) { return augsub::cli_run(argc, argv); }
