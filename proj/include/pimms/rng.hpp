#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace pimms {

using Rng = std::mt19937_64;

/// Independent generator for one purpose ("init", "data", "dropout", ...)
/// derived from a run seed. Streams with different purposes never share state.
Rng make_stream(std::uint64_t seed, std::string_view purpose);

/// Child seed for item `index` of a parallel job, independent of scheduling.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index);

double uniform(Rng& rng, double lo, double hi);
double normal(Rng& rng, double mean, double stddev);
std::size_t uniform_index(Rng& rng, std::size_t n);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace pimms
