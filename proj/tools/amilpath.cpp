#include "amilpath/cli.hpp"

int main(int argc, char** argv) { return amilpath::cli::run(argc, argv); }
