#include "namelink/cli.hpp"

int main(int argc, char** argv) { return namelink::cli::dispatch(argc, argv); }
