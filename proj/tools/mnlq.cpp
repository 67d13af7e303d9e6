#include "mnlq/cli.hpp"

int main(int argc, char** argv) { return mnlq::experiments::run_app(argc, argv); }
