#include "metalens/cli/commands.hpp"

int main(int argc, char** argv) { return metalens::cli::run(argc, argv); }
