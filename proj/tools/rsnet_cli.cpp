#include "rsnet/cli.hpp"

int main(int argc, char** argv) { return rsn::cli_main(argc, argv); }
