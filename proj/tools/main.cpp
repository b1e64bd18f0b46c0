#include "kafuse/cli.hpp"

int main(int argc, char** argv) { return kafuse::run_cli(argc, argv); }
