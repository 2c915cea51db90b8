#include "convar/cli.hpp"

int main(int argc, char** argv) { return convar::run_cli(argc, argv); }
