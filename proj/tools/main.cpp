#include "langlab/cli.hpp"

int main(int argc, char** argv) { return langlab::run_command(argc, argv); }
