#include "psilab/cli.hpp"

int main(int argc, char** argv) { return psilab::cli::run(argc, argv); }
