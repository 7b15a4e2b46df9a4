#include "cgnet/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cgnet {

namespace {
int g_threads = 1;
}

int num_threads() { return g_threads; }

void set_num_threads(int n) {
  if (n < 1) throw std::invalid_argument("thread count must be >= 1, got " + std::to_string(n));
  g_threads = n;
}

void init_threads_from_env() {
  const char* env = std::getenv("CGNET_THREADS");
  if (env == nullptr || *env == '\0') {
    set_num_threads(omp_get_max_threads());
    return;
  }
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) throw std::invalid_argument(std::string("CGNET_THREADS: invalid value '") + env + "'");
  set_num_threads(static_cast<int>(n));
}

}  // namespace cgnet
