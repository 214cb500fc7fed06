#include "htsk/cli.hpp"

int main(int argc, char** argv) { return htsk::cli::main(argc, argv); }
