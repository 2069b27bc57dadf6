#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "pimms/evaluation.hpp"
#include "pimms/ops.hpp"
#include "pimms/training.hpp"

using namespace pimms;
using namespace pimms::train;

namespace {

TrainConfig micro_config(Variant v, std::size_t size = 16) {
  TrainConfig c;
  c.variant = v;
  c.patch = size;
  c.batch = 2;
  c.max_iters = 20;
  c.val_every = 10;
  c.seg.backend = {1, 3, 3};
  c.seg.frontend = {3, 3, 3};
  c.fmod.stages = 1;
  c.fmod.blocks_per_stage = 1;
  c.fmod.convs_per_block = 1;
  c.fmod.base_filters = 2;
  c.fmod.height = c.fmod.width = size;
  return c;
}

ClassifierCheckpoint micro_classifier(const TrainConfig& c, std::uint64_t seed = 5) {
  ClassifierCheckpoint ck;
  ck.config = c.fmod;
  Rng rng(seed);
  modality::init_classifier(ck.params, ck.config, rng);
  return ck;
}

const synth::Dataset& toy_data() {
  static const synth::Dataset ds = synth::build_dataset(testing::small_dataset(20, 4));
  return ds;
}

std::map<std::string, Tensor> snapshot(const ad::ParamSet& ps, std::string_view prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& e : ps)
    if (e.name.compare(0, prefix.size(), prefix) == 0) out[e.name] = e.tensor;
  return out;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("curriculum count probabilities") {
    CurriculumConfig c;
    auto p3 = c.count_probabilities(3);
    CHECK(p3[0] == doctest::Approx(0.4));
    CHECK(p3[1] == doctest::Approx(0.4));
    CHECK(p3[2] == doctest::Approx(0.2));
    CHECK(p3[0] + p3[1] == doctest::Approx(0.8));
    auto p2 = c.count_probabilities(2);
    CHECK(p2[0] == doctest::Approx(0.5));
    CHECK(p2[1] == doctest::Approx(0.5));
    CHECK(c.count_probabilities(1) == std::vector<double>{1.0});
    CHECK_THROWS(CurriculumConfig{0.7, 0.5}.validate());
  }

  TEST_CASE("single available scan is never dropped") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      CHECK(curriculum_dropout({true}, {}, rng) == std::vector<bool>{false});
      auto d = curriculum_dropout({false, true, false}, {}, rng);
      CHECK(d == std::vector<bool>{false, false, false});
    }
  }

  TEST_CASE("curriculum frequencies over 1e5 draws") {
    for (const CurriculumConfig cfg : {CurriculumConfig{}, CurriculumConfig{0.2, 0.3}}) {
      Rng rng(2);
      const std::size_t draws = 100000;
      std::vector<double> count_k(3, 0.0), per_scan(3, 0.0);
      for (std::size_t i = 0; i < draws; ++i) {
        auto d = curriculum_dropout({true, true, true}, cfg, rng);
        const auto k = static_cast<std::size_t>(std::count(d.begin(), d.end(), true));
        REQUIRE(k < 3);
        count_k[k] += 1;
        for (std::size_t n = 0; n < 3; ++n) per_scan[n] += d[n];
      }
      const std::vector<double> expected{cfg.p0, cfg.p1, 1 - cfg.p0 - cfg.p1};
      for (std::size_t k = 0; k < 3; ++k) {
        const double sd = std::sqrt(draws * expected[k] * (1 - expected[k]));
        CHECK(std::abs(count_k[k] - draws * expected[k]) <= 3 * sd);
      }
      // Each scan drops with probability (p1 + 2 p_rest) / 3.
      const double q = (expected[1] + 2 * expected[2]) / 3;
      for (std::size_t n = 0; n < 3; ++n)
        CHECK(std::abs(per_scan[n] - draws * q) <= 3 * std::sqrt(draws * q * (1 - q)));
    }
  }

  TEST_CASE("lambda schedule") {
    CHECK(lambda_schedule(0, 1e-4) == 1.0);
    CHECK(std::abs(lambda_schedule(10000, 1e-4) - std::exp(-1.0)) <= 1e-12);
    CHECK(lambda_schedule(123456, 0.0) == 1.0);
    CHECK(lambda_schedule(11, 1e-2) < lambda_schedule(10, 1e-2));
    CHECK_THROWS(lambda_schedule(1, -1.0));
  }

  TEST_CASE("lr zero computes losses and leaves weights untouched") {
    auto cfg = micro_config(Variant::online);
    cfg.adam.lr = 0.0;
    auto state = init_state(cfg);
    const auto before = snapshot(state.model.params, "");
    const auto& ds = toy_data();
    std::vector<Example> batch{{&ds.train[0], nullptr}, {&ds.train[1], nullptr}};
    auto l = train_step(state, batch, cfg);
    CHECK(std::isfinite(l.l_seg));
    CHECK(std::isfinite(l.l_class));
    CHECK(l.l_tot == doctest::Approx(l.l_seg + l.lambda * l.l_class));
    CHECK(snapshot(state.model.params, "") == before);
    CHECK(state.iteration == 1);
  }

  TEST_CASE("offline variants never touch the classifier") {
    for (Variant v : {Variant::soft, Variant::hard}) {
      auto cfg = micro_config(v);
      cfg.adam.lr = 1e-2;
      auto fmod = micro_classifier(cfg);
      auto state = init_state(cfg, &fmod);
      const auto f0 = snapshot(state.model.params, "fmod/");
      const auto s0 = snapshot(state.model.params, "phi_");
      CHECK(f0.size() == fmod.params.size());
      cfg.max_iters = 5;
      state = train::train(cfg, toy_data(), std::move(state));
      CHECK(snapshot(state.model.params, "fmod/") == f0);
      CHECK(snapshot(state.model.params, "phi_") != s0);
    }
    auto h = init_state(micro_config(Variant::hemis));
    CHECK(snapshot(h.model.params, "fmod/").empty());
    CHECK_THROWS(init_state(micro_config(Variant::soft)));
  }

  TEST_CASE("online gradient combines both losses") {
    auto cfg = micro_config(Variant::online);
    cfg.precision = 64;
    cfg.gamma = 0.05;
    cfg.curriculum = {1.0, 0.0};
    auto state = init_state(cfg);
    state.iteration = 7;
    const double lambda = std::exp(-0.05 * 7);
    const auto& subject = toy_data().train[2];
    Model ref = state.model;  // weights before the update
    std::vector<Example> batch{{&subject, nullptr}};
    train_step(state, batch, cfg);

    auto losses = [&](double& ls, double& lc) {
      ad::Tape tape;
      auto r = forward(tape, ref, subject.scans, subject.labels);
      ls = seg::dice_loss(r.prediction, subject.mask).value().item();
      lc = modality::class_loss(ad::concat_last(r.columns), subject.labels).value().item();
    };
    std::size_t probed = 0;
    for (const char* name : {"fmod/stem/kernel", "fmod/head/weights", "fmod/s0b0c0/kernel"}) {
      if (!ref.params.contains(name)) continue;
      Tensor& w = ref.params.get(name);
      const auto grad = state.model.params.get(name).grad();
      for (std::size_t i = 0; i < w.size(); i += 3) {
        const double w0 = w[i], h = 1e-5 * std::max(1.0, std::abs(w0));
        double ls_p, lc_p, ls_m, lc_m;
        w[i] = w0 + h;
        losses(ls_p, lc_p);
        w[i] = w0 - h;
        losses(ls_m, lc_m);
        w[i] = w0;
        const double d_seg = (ls_p - ls_m) / (2 * h), d_class = (lc_p - lc_m) / (2 * h);
        const double expected = lambda * d_class + d_seg;
        CHECK(grad[i] == doctest::Approx(expected).epsilon(1e-4).scale(1e-4));
        ++probed;
      }
    }
    CHECK(probed > 5);
  }

  TEST_CASE("huge gamma reduces the total loss to the segmentation loss") {
    auto cfg = micro_config(Variant::online);
    cfg.gamma = 1e9;
    auto state = init_state(cfg);
    const auto& ds = toy_data();
    std::vector<Example> batch{{&ds.train[0], nullptr}};
    auto first = train_step(state, batch, cfg);
    CHECK(first.lambda == 1.0);
    auto second = train_step(state, batch, cfg);
    CHECK(second.lambda == 0.0);
    CHECK(second.l_tot == second.l_seg);
  }

  TEST_CASE("online trace records the decaying class weight") {
    auto cfg = micro_config(Variant::online);
    cfg.gamma = 0.01;
    auto state = train::train(cfg, toy_data(), init_state(cfg));
    REQUIRE(state.trace.size() == 20);
    for (const auto& row : state.trace) {
      CHECK(row.lambda == std::exp(-0.01 * static_cast<double>(row.iteration)));
      CHECK(std::isfinite(row.l_class));
    }
    CHECK(std::isfinite(state.trace[9].val_dice));
    CHECK(std::isnan(state.trace[8].val_dice));
    const std::string csv = trace_csv(state.trace);
    CHECK(csv.rfind("iteration,l_seg,l_class,lambda,val_dice\n", 0) == 0);

    auto soft_cfg = micro_config(Variant::soft);
    auto fmod = micro_classifier(soft_cfg);
    auto soft = train::train(soft_cfg, toy_data(), init_state(soft_cfg, &fmod));
    for (const auto& row : soft.trace) CHECK(std::isnan(row.l_class));
  }

  TEST_CASE("same seed gives identical traces and weights") {
    auto cfg = micro_config(Variant::hemis);
    auto a = train::train(cfg, toy_data(), init_state(cfg));
    auto b = train::train(cfg, toy_data(), init_state(cfg));
    CHECK(trace_csv(a.trace) == trace_csv(b.trace));
    CHECK(encode_state(a) == encode_state(b));
    cfg.seed = 2;
    auto c = train::train(cfg, toy_data(), init_state(cfg));
    CHECK(trace_csv(a.trace) != trace_csv(c.trace));
  }

  TEST_CASE("resumed training is bitwise identical") {
    for (Variant v : {Variant::hemis, Variant::online}) {
      auto cfg = micro_config(v);
      auto straight = train::train(cfg, toy_data(), init_state(cfg));
      TrainOptions half;
      half.stop_after = 7;
      auto part = train::train(cfg, toy_data(), init_state(cfg), half);
      CHECK(part.iteration == 7);
      auto resumed = train::train(cfg, toy_data(), decode_state(encode_state(part)));
      CHECK(encode_state(resumed) == encode_state(straight));
      CHECK(trace_csv(resumed.trace) == trace_csv(straight.trace));
    }
  }

  TEST_CASE("training writes its artifacts") {
    testing::TempDir dir("train");
    auto cfg = micro_config(Variant::hemis);
    TrainOptions opts;
    opts.out_dir = dir.path();
    auto state = train::train(cfg, toy_data(), init_state(cfg), opts);
    for (const char* f : {"model.ckpt", "best.ckpt", "trace.csv", "state.bin"}) CHECK(std::filesystem::exists(dir / f));
    auto loaded = load_state(dir / "state.bin");
    CHECK(encode_state(loaded) == encode_state(state));
    Model best = load_model(dir / "best.ckpt");
    CHECK(best.variant == Variant::hemis);
    CHECK(testing::slurp(dir / "trace.csv") == trace_csv(state.trace));
    CHECK_THROWS(decode_state("PIMMSSTATE1 garbage"));
  }

  TEST_CASE("training input errors") {
    auto cfg = micro_config(Variant::hemis);
    synth::Dataset empty;
    CHECK_THROWS_WITH(train::train(cfg, empty, init_state(cfg)), doctest::Contains("empty dataset"));
    auto wrong = cfg;
    wrong.patch = 32;
    CHECK_THROWS(train::train(wrong, toy_data(), init_state(cfg)));
    auto kv = KeyValueConfig::parse("lr=0.001\nbatch=4\nbogus=1\n", "cfg");
    CHECK_THROWS_AS(TrainConfig::from_config(kv), ConfigError);
    auto ok = KeyValueConfig::parse("lr=0.001\nbatch=4\ngamma=0.5\n", "cfg");
    auto parsed = TrainConfig::from_config(ok);
    CHECK(parsed.adam.lr == 0.001);
    CHECK(parsed.batch == 4);
    CHECK(parsed.gamma == 0.5);
    CHECK(micro_config(Variant::online).effective_batch() == 1);
  }

  TEST_CASE("two-sample soft model memorises its training set") {
    const auto& all = toy_data();
    synth::Dataset two;
    for (const auto& s : all.train)
      if (two.train.size() < 2 && std::accumulate(s.mask.data().begin(), s.mask.data().end(), 0.0) > 0)
        two.train.push_back(s);
    REQUIRE(two.train.size() == 2);
    two.val = two.train;
    TrainConfig cfg;
    cfg.variant = Variant::soft;
    cfg.patch = 16;
    cfg.batch = 2;
    cfg.max_iters = 500;
    cfg.fmod.height = cfg.fmod.width = 16;
    cfg.fmod.stages = 1;
    cfg.fmod.blocks_per_stage = 1;
    cfg.fmod.base_filters = 4;
    auto fmod = micro_classifier(cfg);
    auto state = train::train(cfg, two, init_state(cfg, &fmod));
    const double dice = validation_dice(state.model, two.train);
    MESSAGE("training Dice ", dice);
    CHECK(dice > 0.95);
  }
}
