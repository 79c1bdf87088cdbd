#include "app.hpp"

int main(int argc, char** argv) { return inflare::cli::run(argc, argv); }
