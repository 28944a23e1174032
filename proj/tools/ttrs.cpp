#include "ttrs/cli.hpp"

int main(int argc, char** argv) { return ttrs::cli::run(argc, argv); }
