#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ecgdk/common.h"

int main(int argc, char** argv) {
  ecgdk::set_warnings_enabled(false);
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
