#include "corwa/cli.hpp"

int main(int argc, char** argv) { return corwa::cli_main(argc, argv); }
