#define DOCTEST_CONFIG_IMPLEMENT
#include <ATen/Parallel.h>

#include <doctest.h>

int main(int argc, char** argv) {
  at::set_num_threads(1);
  doctest::Context context(argc, argv);
  return context.run();
}
