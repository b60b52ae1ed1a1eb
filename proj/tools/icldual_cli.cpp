#include "icl/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates many short-lived d_r x n buffers; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return icl::run_command(args, std::cout, std::cerr);
}
