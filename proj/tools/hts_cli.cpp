#include "cli_app.hpp"

int main(int argc, char** argv) { return hts::cli::run(argc, argv); }
