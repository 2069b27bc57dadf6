#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pimms/classifier.hpp"
#include "pimms/grad_check.hpp"
#include "pimms/model.hpp"
#include "pimms/ops.hpp"
#include "pimms/segmentation.hpp"

using namespace pimms;
using namespace pimms::seg;
using testing::random_mask;
using testing::random_tensor;

namespace {

SegmentationConfig micro_seg() {
  SegmentationConfig c;
  c.backend = {2, 3, 3};
  c.frontend = {2, 3, 3};
  return c;
}

std::vector<ad::Var> constants(ad::Tape& tape, const std::vector<Tensor>& ts) {
  std::vector<ad::Var> out;
  for (const auto& t : ts) out.push_back(tape.constant(t));
  return out;
}

}  // namespace

TEST_SUITE("segmentation") {
  TEST_CASE("zero slot with zero biases gives a zero embedding") {
    auto cfg = micro_seg();
    ad::ParamSet ps;
    Rng rng(1);
    init_segmentation(ps, cfg, rng);
    ad::Tape tape;
    std::vector<Tensor> slots(3, Tensor({5, 5}));
    for (const auto& e : backend_forward(tape, constants(tape, slots), cfg, ps)) {
      CHECK(e.shape() == Shape{5, 5, 3});
      CHECK(e.value().all_zero());
    }
  }

  TEST_CASE("backends never share weights") {
    auto cfg = micro_seg();
    ad::ParamSet ps;
    Rng rng(2);
    init_segmentation(ps, cfg, rng);
    std::vector<Tensor> slots{random_tensor({5, 5}, rng), random_tensor({5, 5}, rng), random_tensor({5, 5}, rng)};
    ad::Tape t1;
    auto before = backend_forward(t1, constants(t1, slots), cfg, ps);
    for (auto& v : ps.get("phi_t1/conv0/kernel").data()) v += 0.5;
    ad::Tape t2;
    auto after = backend_forward(t2, constants(t2, slots), cfg, ps);
    CHECK_FALSE(before[0].value() == after[0].value());
    CHECK(before[1].value() == after[1].value());
    CHECK(before[2].value() == after[2].value());
    CHECK(backend_prefix(0) == "phi_t1/");
    CHECK(backend_prefix(2) == "phi_f/");
  }

  TEST_CASE("backend matches the composed-op oracle") {
    auto cfg = micro_seg();
    ad::ParamSet ps;
    Rng rng(3);
    init_segmentation(ps, cfg, rng);
    for (auto& e : ps)
      if (e.name.find("/bias") != std::string::npos)
        for (auto& v : e.tensor.data()) v = std::uniform_real_distribution<>(-0.2, 0.2)(rng);
    Tensor x = random_tensor({6, 6}, rng);
    ad::Tape tape;
    std::vector<Tensor> slots{Tensor({6, 6}), Tensor({6, 6}), x};
    auto emb = backend_forward(tape, constants(tape, slots), cfg, ps);

    ad::Tape ref;
    auto conv = [&](ad::Var in, const std::string& name) {
      return ad::relu(ad::conv2d(in, ref.constant(ps.get(name + "/kernel")), ref.constant(ps.get(name + "/bias")),
                                 ad::Padding::zero_same));
    };
    auto h = conv(conv(ref.constant(x.reshaped({6, 6, 1})), "phi_f/conv0"), "phi_f/conv1");
    CHECK(emb[2].value() == ad::maxpool2d(h, 2, 1, ad::Padding::zero_same).value());
  }

  TEST_CASE("abstraction analytic cases") {
    Rng rng(4);
    Tensor a = random_tensor({3, 3, 2}, rng), b = random_tensor({3, 3, 2}, rng), z({3, 3, 2});
    ad::Tape tape;
    auto single = abstraction(constants(tape, {a, z, z}), {true, false, false}, StatsMode::exclusion);
    CHECK(single.shape() == Shape{3, 3, 4});
    for (std::size_t p = 0; p < 9; ++p)
      for (std::size_t k = 0; k < 2; ++k) {
        CHECK(single.value()[p * 4 + k] == a[p * 2 + k]);
        CHECK(single.value()[p * 4 + 2 + k] == 0.0);
      }
    auto pair = abstraction(constants(tape, {a, b}), {true, true}, StatsMode::imputation);
    for (std::size_t p = 0; p < 9; ++p)
      for (std::size_t k = 0; k < 2; ++k) {
        const double x = a[p * 2 + k], y = b[p * 2 + k];
        CHECK(pair.value()[p * 4 + k] == doctest::Approx((x + y) / 2).epsilon(1e-14));
        CHECK(pair.value()[p * 4 + 2 + k] == doctest::Approx((x - y) * (x - y) / 4).epsilon(1e-12));
      }
    CHECK_THROWS(abstraction(constants(tape, {a, b}), {false, false}, StatsMode::exclusion));
  }

  TEST_CASE("abstraction matches a scalar mean and variance oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Tensor> e{random_tensor({4, 4, 3}, rng), random_tensor({4, 4, 3}, rng),
                            random_tensor({4, 4, 3}, rng)};
      for (StatsMode mode : {StatsMode::imputation, StatsMode::exclusion}) {
        const std::vector<bool> avail{true, trial % 2 == 0, true};
        ad::Tape tape;
        auto out = abstraction(constants(tape, e), avail, mode);
        for (std::size_t i = 0; i < 16 * 3; ++i) {
          double n = 0, s = 0, sq = 0;
          for (std::size_t m = 0; m < 3; ++m)
            if (mode == StatsMode::imputation || avail[m]) {
              n += 1;
              s += e[m][i];
            }
          const double mean = s / n;
          for (std::size_t m = 0; m < 3; ++m)
            if (mode == StatsMode::imputation || avail[m]) sq += (e[m][i] - mean) * (e[m][i] - mean);
          const std::size_t p = i / 3, k = i % 3;
          CHECK(std::abs(out.value()[p * 6 + k] - mean) <= 1e-12);
          CHECK(std::abs(out.value()[p * 6 + 3 + k] - sq / n) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("frontend with zero weights is uniform and always normalised") {
    auto cfg = micro_seg();
    ad::ParamSet ps;
    Rng rng(6);
    init_segmentation(ps, cfg, rng);
    ad::Tape tape;
    auto fused = tape.constant(random_tensor({5, 5, 6}, rng));
    auto p = frontend_forward(fused, cfg, ps);
    for (std::size_t i = 0; i < 25; ++i) CHECK(std::abs(p.value()[2 * i] + p.value()[2 * i + 1] - 1.0) <= 1e-9);
    for (auto& e : ps) e.tensor = Tensor(e.tensor.shape());
    auto u = frontend_forward(tape.constant(Tensor({5, 5, 6})), cfg, ps);
    for (double v : u.value().data()) CHECK(v == 0.5);
    CHECK_THROWS(frontend_forward(tape.constant(Tensor({5, 5, 4})), cfg, ps));
  }

  TEST_CASE("frontend matches the composed-op oracle") {
    auto cfg = micro_seg();
    ad::ParamSet ps;
    Rng rng(7);
    init_segmentation(ps, cfg, rng);
    Tensor f = random_tensor({5, 5, 6}, rng);
    ad::Tape tape;
    auto got = frontend_forward(tape.constant(f), cfg, ps);
    ad::Tape ref;
    auto c = [&](ad::Var in, const char* name) {
      return ad::conv2d(in, ref.constant(ps.get(std::string("phi_seg/") + name + "/kernel")),
                        ref.constant(ps.get(std::string("phi_seg/") + name + "/bias")), ad::Padding::zero_same);
    };
    CHECK(got.value() == ad::softmax(c(ad::relu(c(ref.constant(f), "conv0")), "conv1"), 2).value());
  }

  TEST_CASE("dice loss degenerate cases") {
    Rng rng(8);
    Tensor g = random_mask({6, 6}, rng, 0.4);
    Tensor pred({6, 6, 2});
    for (std::size_t i = 0; i < 36; ++i) {
      pred[2 * i + 1] = g[i];
      pred[2 * i] = 1 - g[i];
    }
    ad::Tape tape;
    CHECK(dice_loss(tape.constant(pred), g).value().item() == doctest::Approx(0.0).epsilon(1e-12));
    Tensor zero({6, 6, 2});
    CHECK(std::abs(dice_loss(tape.constant(zero), Tensor({6, 6})).value().item()) < 1e-12);
    CHECK_THROWS(dice_loss(tape.constant(zero), Tensor({6, 6}, 0.5)));
    CHECK_THROWS(dice_loss(tape.constant(zero), Tensor({5, 6})));
  }

  TEST_CASE("dice loss matches the scalar formula and finite differences") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor g = random_mask({5, 5}, rng, 0.3);
      Tensor pred = random_tensor({5, 5, 2}, rng, 0.0, 1.0);
      double pg = 0, p2 = 0, g2 = 0;
      for (std::size_t i = 0; i < 25; ++i) {
        pg += pred[2 * i + 1] * g[i];
        p2 += pred[2 * i + 1] * pred[2 * i + 1];
        g2 += g[i];
      }
      const double expected = 1.0 - (2 * pg + kDiceEps) / (p2 + g2 + kDiceEps);
      ad::Tape tape;
      CHECK(dice_loss(tape.constant(pred), g).value().item() == doctest::Approx(expected).epsilon(1e-13));
      auto rep = ad::grad_check([&](ad::Tape&, std::span<const ad::Var> in) { return dice_loss(in[0], g); }, {pred});
      CHECK(rep.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("full micro network passes finite differences") {
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
      Model model = testing::micro_model(Variant::online, 100 + trial, 4);
      std::vector<Tensor*> params;
      for (auto& e : model.params) params.push_back(&e.tensor);
      Tensor target = random_mask({4, 4}, rng, 0.4);
      std::vector<ModalityLabel> labels{ModalityLabel(0), ModalityLabel(2)};
      const std::vector<Tensor> scans{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)};
      auto f = [&](ad::Tape& t, std::span<const ad::Var>) {
        ForwardResult r = forward(t, model, scans);
        ad::Var loss = dice_loss(r.prediction, target);
        return ad::add(loss, ad::scale(modality::class_loss(*r.scores, labels), 0.7));
      };
      auto rep = ad::grad_check(f, {}, params);
      CHECK_MESSAGE(rep.passed(), "trial ", trial, " err ", rep.max_rel_error);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}
