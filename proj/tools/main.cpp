#include "cli.hpp"

int main(int argc, char** argv) { return vhgnn::cli::run(argc, argv); }
