#include "seqlearn/cli.hpp"

int main(int argc, char** argv) { return seqlearn::cli::run_main(argc, argv); }
