#include "clv/cli.hpp"

int main(int argc, char** argv) { return clv::run(argc, argv); }
