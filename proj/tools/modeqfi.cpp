#include "modeqfi/cli.hpp"

int main(int argc, char** argv) { return modeqfi::cli::run(argc, argv); }
