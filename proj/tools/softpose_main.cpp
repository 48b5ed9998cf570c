#include "softpose/cli.hpp"

int main(int argc, char** argv) { return softpose::cli::run(argc, argv); }
