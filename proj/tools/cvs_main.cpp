#include "cvs/cli.hpp"

int main(int argc, char** argv) { return cvs::run_cli(argc, argv); }
