#include "deshadow/cli.hpp"

int main(int argc, char** argv) { return deshadow::run_cli(argc, argv); }
