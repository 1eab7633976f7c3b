#include "stpatch/cli.hpp"

int main(int argc, char** argv) { return stpatch::cli_main(argc, argv); }
