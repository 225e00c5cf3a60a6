#include "alner/cli.hpp"

int main(int argc, char** argv) { return alner::cli_main(argc, argv); }
