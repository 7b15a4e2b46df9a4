#pragma once

#include <cstdint>

namespace cgnet {

/// Worker-thread cap. Initialized from CGNET_THREADS by init_threads_from_env().
int num_threads();
void set_num_threads(int n);
void init_threads_from_env();

/// Runs body(i) for i in [0, count). Each index must own its outputs exclusively;
/// results are then bitwise independent of the thread count. `work` is a rough
/// per-call cost used to skip threading for tiny kernels.
template <typename Body>
void parallel_for(std::int64_t count, std::int64_t work, Body&& body) {
  const bool threaded = num_threads() > 1 && count > 1 && work > (1 << 15);
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (threaded)
  for (std::int64_t i = 0; i < count; ++i) body(i);
}

}  // namespace cgnet
