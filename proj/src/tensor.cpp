#include "cgnet/tensor.hpp"

#include <sstream>

namespace cgnet {

namespace {
void validate(const Dims& d) {
  if (d.rank < 1 || d.rank > 4) throw std::invalid_argument("dims: rank must be 1..4, got " + std::to_string(d.rank));
  for (int i = 0; i < d.rank; ++i)
    if (d[i] < 1) throw std::invalid_argument("dims: extent " + std::to_string(i) + " must be >= 1, got " + std::to_string(d[i]));
}
}  // namespace

Dims::Dims(std::initializer_list<int> extents) : Dims(std::vector<int>(extents)) {}

Dims::Dims(const std::vector<int>& extents) {
  if (extents.size() > 4) throw std::invalid_argument("dims: rank must be 1..4, got " + std::to_string(extents.size()));
  rank = static_cast<int>(extents.size());
  for (std::size_t i = 0; i < extents.size(); ++i) ext[i] = extents[i];
  validate(*this);
}

std::size_t Dims::numel() const {
  std::size_t n = 1;
  for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(ext[static_cast<std::size_t>(i)]);
  return rank == 0 ? 0 : n;
}

std::string Dims::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank; ++i) os << (i ? "," : "") << ext[static_cast<std::size_t>(i)];
  os << ']';
  return os.str();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : state_(0), inc_((stream << 1u) | 1u) {
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Rng::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint32_t Rng::below(std::uint32_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
  const std::uint32_t threshold = (0u - bound) % bound;
  for (;;) {
    const std::uint32_t r = next_u32();
    if (r >= threshold) return r % bound;
  }
}

Rng Rng::substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t s = splitmix64(seed ^ splitmix64(a * 0x100000001b3ULL + splitmix64(b)));
  return Rng(s, splitmix64(s + a + 1));
}

}  // namespace cgnet
