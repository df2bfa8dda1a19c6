#include "cli.hpp"

int main(int argc, char** argv) { return kbqa::cli::run(argc, argv); }
