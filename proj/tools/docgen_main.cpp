#include "docgen/cli.hpp"

int main(int argc, char** argv) { return docgen::run_cli(argc, argv); }
