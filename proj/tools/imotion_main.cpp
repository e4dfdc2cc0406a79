#include "imotion/cli.hpp"

int main(int argc, char** argv) { return imotion::run_cli(argc, argv); }
