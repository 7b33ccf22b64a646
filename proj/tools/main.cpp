#include <malloc.h>

#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Keep per-batch activation buffers on the heap instead of fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return xinv::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
