#include "cgnet/ops.hpp"

namespace cgnet {

std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    double s = (i + 0.5) * in / out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(s));
    taps[static_cast<std::size_t>(i)] = BilinearTap{lo, std::min(lo + 1, in - 1), s - lo};
  }
  return taps;
}

}  // namespace cgnet
