#include "nkd/cli.hpp"

int main(int argc, char** argv) { return nkd::cli_main(argc, argv); }
