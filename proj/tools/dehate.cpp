#include <dehate/cli.hpp>

int main(int argc, char** argv) { return dehate::cli::run(argc, argv); }
