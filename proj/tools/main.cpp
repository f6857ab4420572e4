#include "cli.hpp"

int main(int argc, char** argv) { return clipose::cli::run(argc, argv); }
