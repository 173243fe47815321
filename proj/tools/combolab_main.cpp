#include <combolab/cli.hpp>

int main(int argc, char** argv) { return combolab::cli::run(argc, argv); }
