#include "tfdl/cli.hpp"

int main(int argc, char** argv) { return tfdl::cli::run(argc, argv); }
