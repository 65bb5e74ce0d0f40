#include "mismatch/cli.hpp"

int main(int argc, char** argv) { return mismatch::run_cli(argc, argv); }
