#include "looptwin/cli.hpp"

int main(int argc, char** argv) { return looptwin::cli_main(argc, argv); }
