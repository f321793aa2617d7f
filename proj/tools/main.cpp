#include "gramreg/cli.hpp"

int main(int argc, char** argv) { return gramreg::run_cli(argc, argv); }
