#include "pimms/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace pimms {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

Rng make_stream(std::uint64_t seed, std::string_view purpose) {
  const std::uint64_t p = fnv1a(purpose);
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(p), hi32(p)};
  return Rng(seq);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
  const std::uint64_t p = fnv1a(purpose);
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(p), hi32(p), lo32(index), hi32(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double normal(Rng& rng, double mean, double stddev) {
  if (stddev == 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& state) {
  std::istringstream is(state);
  Rng rng;
  is >> rng;
  if (is.fail()) throw std::runtime_error("corrupt RNG state");
  return rng;
}

}  // namespace pimms
