#include "nldar/cli.hpp"

int main(int argc, char** argv) { return nldar::cli::dispatch(argc, argv); }
