#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pimms/model.hpp"
#include "pimms/synth.hpp"
#include "pimms/tensor.hpp"

namespace testing {

using pimms::Rng;
using pimms::Shape;
using pimms::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline Tensor random_mask(Shape shape, Rng& rng, double p) {
  Tensor t(std::move(shape));
  std::bernoulli_distribution d(p);
  for (auto& v : t.data()) v = d(rng) ? 1.0 : 0.0;
  return t;
}

inline std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Tiny network used wherever a full-size model would only slow tests down.
inline pimms::Model micro_model(pimms::Variant variant, std::uint64_t seed, std::size_t size = 8) {
  pimms::seg::SegmentationConfig sc;
  sc.backend = {1, 2, 3};
  sc.frontend = {2, 3, 3};
  pimms::modality::ClassifierConfig fc;
  fc.stages = 1;
  fc.blocks_per_stage = 1;
  fc.convs_per_block = 1;
  fc.base_filters = 2;
  fc.height = fc.width = size;
  Rng rng(seed);
  pimms::ad::ParamSet fmod;
  pimms::modality::init_classifier(fmod, fc, rng);
  return pimms::make_model(variant, sc, fc, rng, variant == pimms::Variant::hemis ? nullptr : &fmod);
}

inline pimms::synth::DatasetConfig small_dataset(std::size_t samples, std::uint64_t seed = 3) {
  pimms::synth::DatasetConfig c;
  c.samples = samples;
  c.holdout_samples = samples / 5;
  c.seed = seed;
  c.phantom.height = c.phantom.width = 16;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pimms-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace testing
