#include "dcap/cli.hpp"

int main(int argc, char** argv) { return dcap::run_cli(argc, argv); }
