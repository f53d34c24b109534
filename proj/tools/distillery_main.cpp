#include "distillery/cli.hpp"

int main(int argc, char** argv) { return distillery::cli::run(argc, argv); }
