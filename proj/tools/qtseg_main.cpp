#include "qtseg/cli.hpp"

int main(int argc, char** argv) { return qtseg::run_cli(argc, argv); }
