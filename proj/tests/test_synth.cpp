#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "pimms/io.hpp"
#include "pimms/synth.hpp"

using namespace pimms;
using namespace pimms::synth;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = testing::slurp(e.path());
  return out;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("phantoms are reproducible from a seed") {
    PhantomConfig cfg;
    Rng a(9), b(9);
    auto p = sample_phantom(a, cfg), q = sample_phantom(b, cfg);
    CHECK(p.q1 == q.q1);
    CHECK(p.q2 == q.q2);
    CHECK(p.lesion_mask == q.lesion_mask);
    CHECK(p.regions == q.regions);
  }

  TEST_CASE("lesion area fraction and zero-lesion rate") {
    PhantomConfig cfg;
    std::size_t empty = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(5, "phantom", i));
      auto ph = sample_phantom(rng, cfg);
      double area = 0;
      for (double v : ph.lesion_mask.data()) {
        CHECK((v == 0.0 || v == 1.0));
        area += v;
      }
      const double frac = area / static_cast<double>(cfg.height * cfg.width);
      CHECK(frac == doctest::Approx(ph.lesion_fraction()));
      if (ph.lesion_count == 0) {
        ++empty;
        CHECK(area == 0.0);
      } else {
        CHECK(ph.lesion_count <= cfg.max_lesions);
        CHECK(frac >= cfg.lesion_fraction_min);
        CHECK(frac <= cfg.lesion_fraction_max);
      }
      for (std::size_t p = 0; p < ph.regions.size(); ++p)
        CHECK((ph.regions[p] == Region::lesion) == (ph.lesion_mask[p] == 1.0));
    }
    // Binomial(1000, 0.1): 3 sigma is about 28.5.
    CHECK(std::abs(static_cast<double>(empty) - 100.0) <= 3 * std::sqrt(1000 * 0.1 * 0.9));
  }

  TEST_CASE("rendering identity and distinctness") {
    PhantomConfig cfg;
    Rng rng(3);
    auto ph = sample_phantom(rng, cfg);
    ModalityParams id{1.0, 0.0, 1.0, 0.0, 0.0};
    CHECK(render_modality(ph, id, rng) == ph.q1);
    ModalityParams other{0.0, 1.0, 1.0, 0.0, 0.0};
    CHECK(render_modality(ph, other, rng) == ph.q2);
    Rng prng(4);
    auto proto = draw_protocol(training_family(), "p", prng);
    Rng r1(1), r2(1);
    CHECK_FALSE(render_modality(ph, proto, 0, r1) == render_modality(ph, proto, 2, r2));
    CHECK_THROWS(render_modality(ph, proto, 3, r1));
  }

  TEST_CASE("FLAIR lesions are at least 1.5 times brighter than tissue") {
    PhantomConfig cfg;
    Rng prng(8);
    double lesion = 0, tissue = 0;
    std::size_t nl = 0, nt = 0, phantoms = 0;
    for (std::size_t i = 0; phantoms < 100; ++i) {
      Rng rng(derive_seed(8, "flair", i));
      auto ph = sample_phantom(rng, cfg);
      if (ph.lesion_count == 0) continue;
      ++phantoms;
      auto proto = draw_protocol(training_family(), "p", prng);
      Tensor img = render_modality(ph, proto, 2, rng);
      for (std::size_t p = 0; p < img.size(); ++p) {
        if (ph.regions[p] == Region::lesion) {
          lesion += img[p];
          ++nl;
        } else if (ph.regions[p] != Region::background) {
          tissue += img[p];
          ++nt;
        }
      }
    }
    const double ratio = (lesion / static_cast<double>(nl)) / (tissue / static_cast<double>(nt));
    MESSAGE("FLAIR lesion/tissue ratio ", ratio);
    CHECK(ratio >= 1.5);
  }

  TEST_CASE("holdout protocols fall outside the training boxes") {
    Rng rng(11);
    const auto train = training_family();
    for (int i = 0; i < 200; ++i) {
      CHECK(outside_family(draw_protocol(holdout_family(), "h", rng), train));
      CHECK_FALSE(outside_family(draw_protocol(train, "t", rng), train));
    }
    auto ds = build_dataset(testing::small_dataset(20));
    std::set<std::string> held;
    for (const auto& s : ds.holdout) {
      CHECK(s.protocol.rfind("holdout-", 0) == 0);
      held.insert(s.protocol);
    }
    CHECK_FALSE(held.empty());
    for (const auto& split : {&ds.train, &ds.val, &ds.test})
      for (const auto& s : *split) CHECK(s.protocol.rfind("mixed-", 0) == 0);
  }

  TEST_CASE("100 samples split 80/10/10") {
    auto cfg = testing::small_dataset(100);
    auto ds = build_dataset(cfg);
    CHECK(ds.train.size() == 80);
    CHECK(ds.val.size() == 10);
    CHECK(ds.test.size() == 10);
    CHECK(ds.holdout.size() == 20);
    std::set<std::string> ids;
    for (const auto& name : kSplits)
      for (const auto& s : ds.split(name)) {
        CHECK(s.split == name);
        CHECK(s.scans.size() == 3);
        CHECK(s.labels.size() == 3);
        ids.insert(s.id);
      }
    CHECK(ids.size() == 120);
    CHECK_THROWS(ds.split("bogus"));
  }

  TEST_CASE("scan order within a subject is shuffled") {
    auto ds = build_dataset(testing::small_dataset(30));
    std::set<std::size_t> first;
    for (const auto& s : ds.train) {
      std::set<std::size_t> seen;
      for (const auto& l : s.labels) seen.insert(l.index());
      CHECK(seen.size() == 3);
      first.insert(s.labels[0].index());
    }
    CHECK(first.size() > 1);
  }

  TEST_CASE("write, load and byte-identical regeneration") {
    testing::TempDir dir("synth");
    auto cfg = testing::small_dataset(10);
    auto ds = generate_dataset(cfg, dir / "a");
    generate_dataset(cfg, dir / "b");
    auto ta = tree_bytes(dir / "a");
    CHECK(ta == tree_bytes(dir / "b"));
    CHECK(ta.count("dataset.txt") == 1);
    // A rerun into the same directory reproduces it.
    generate_dataset(cfg, dir / "a");
    CHECK(ta == tree_bytes(dir / "a"));

    auto loaded = load_dataset(dir / "a");
    CHECK(loaded.total() == ds.total());
    for (const auto& name : kSplits) {
      const auto& x = ds.split(name);
      const auto& y = loaded.split(name);
      REQUIRE(x.size() == y.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].id == y[i].id);
        CHECK(x[i].protocol == y[i].protocol);
        CHECK(x[i].labels == y[i].labels);
        CHECK(x[i].mask == y[i].mask);
        for (std::size_t k = 0; k < 3; ++k) CHECK(x[i].scans[k] == y[i].scans[k]);
      }
    }
    auto other = cfg;
    other.seed = 99;
    generate_dataset(other, dir / "c");
    CHECK(ta != tree_bytes(dir / "c"));
  }

  TEST_CASE("dataset writing errors") {
    testing::TempDir dir("synth-err");
    io::write_file_atomic(dir / "keep" / "x.txt", "x");
    CHECK_THROWS(generate_dataset(testing::small_dataset(5), dir / "keep"));
    CHECK(fs::exists(dir / "keep" / "x.txt"));
    io::write_file_atomic(dir / "file", "x");
    CHECK_THROWS(generate_dataset(testing::small_dataset(5), dir / "file" / "sub"));
    CHECK_THROWS(load_dataset(dir / "missing"));
  }

  TEST_CASE("dataset config keys") {
    auto kv = KeyValueConfig::parse("samples=40\nsize=16\nseed=7\n", "cfg");
    auto c = DatasetConfig::from_config(kv);
    CHECK(c.samples == 40);
    CHECK(c.phantom.height == 16);
    CHECK(c.seed == 7);
    auto bad = KeyValueConfig::parse("sampels=40\n", "cfg");
    CHECK_THROWS_AS(DatasetConfig::from_config(bad), ConfigError);
    auto small = KeyValueConfig::parse("size=8\n", "cfg");
    CHECK_THROWS(DatasetConfig::from_config(small));
  }
}
