#include "enclab/cli.hpp"

int main(int argc, char** argv) { return enclab::cli_main(argc, argv); }
