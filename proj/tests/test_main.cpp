// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "gridpinn/core.hpp"

int main(int argc, char** argv) {
  gridpinn::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
