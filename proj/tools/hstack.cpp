#include "hstack/cli.hpp"

int main(int argc, char** argv) { return hstack::run_cli(argc, argv); }
