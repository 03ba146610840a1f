#include "cli.h"

int main(int argc, char** argv) { return ecgdk::cli::dispatch(argc, argv); }
