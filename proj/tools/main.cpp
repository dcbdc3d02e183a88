#include "lip2us/cli.hpp"

int main(int argc, char** argv) { return lip2us::run_cli(argc, argv); }
