#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "pimms/adam.hpp"
#include "pimms/grad_check.hpp"
#include "pimms/ops.hpp"

using namespace pimms;
using namespace pimms::ad;
using testing::random_tensor;

namespace {

// Direct summation, zero outside the image; `pad` is the top/left offset.
Tensor conv_oracle(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t oh, std::size_t ow, long pad) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t K = k.dim(0), O = k.dim(3);
  Tensor out({oh, ow, O});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long iy = static_cast<long>(y + ky) - pad, ix = static_cast<long>(xx + kx) - pad;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
            for (std::size_t c = 0; c < C; ++c)
              acc += x[(iy * W + ix) * C + c] * k[((ky * K + kx) * C + c) * O + o];
          }
        out[(y * ow + xx) * O + o] = acc;
      }
  return out;
}

Tensor pool_oracle(const Tensor& x) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor out({H, W, C});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t xx = 0; xx < W; ++xx)
      for (std::size_t c = 0; c < C; ++c) {
        double m = -INFINITY;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const bool inside = y + dy < H && xx + dx < W;
            m = std::max(m, inside ? x[((y + dy) * W + xx + dx) * C + c] : 0.0);
          }
        out[(y * W + xx) * C + c] = m;
      }
  return out;
}

Var weighted_sum(Tape& tape, Var out, Rng& rng) {
  return sum(mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  CHECK(max_abs_diff(a, b) <= tol);
}

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("conv2d scalar multiply-add") {
    Tape tape;
    auto y = conv2d(tape.constant(Tensor({1, 1, 1}, 2.0)), tape.constant(Tensor({1, 1, 1, 1}, 3.0)),
                    tape.constant(Tensor::from({1.0})), Padding::valid);
    CHECK(y.value()[0] == 7.0);
  }

  TEST_CASE("conv2d with a centred identity kernel is a no-op") {
    Rng rng(11);
    Tensor x = random_tensor({5, 4, 1}, rng);
    Tensor k({3, 3, 1, 1});
    k[4] = 1.0;
    Tape tape;
    auto y = conv2d(tape.constant(x), tape.constant(k), tape.constant(Tensor({1})), Padding::zero_same);
    CHECK(y.value().storage() == x.storage());
  }

  TEST_CASE("conv2d matches a nested-loop oracle") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor({5, 5, 2}, rng), k = random_tensor({3, 3, 2, 3}, rng), b = random_tensor({3}, rng);
      Tape tape;
      auto v = conv2d(tape.constant(x), tape.constant(k), tape.constant(b), Padding::valid);
      expect_close(v.value(), conv_oracle(x, k, b, 3, 3, 0), 1e-12);
      auto s = conv2d(tape.constant(x), tape.constant(k), tape.constant(b), Padding::zero_same);
      expect_close(s.value(), conv_oracle(x, k, b, 5, 5, 1), 1e-12);
    }
  }

  TEST_CASE("conv2d rejects mismatched shapes") {
    Tape tape;
    auto x = tape.constant(Tensor({4, 4, 2}));
    CHECK_THROWS(conv2d(x, tape.constant(Tensor({3, 3, 1, 2})), tape.constant(Tensor({2})), Padding::valid));
    CHECK_THROWS(conv2d(x, tape.constant(Tensor({5, 5, 2, 2})), tape.constant(Tensor({2})), Padding::valid));
    CHECK_THROWS(conv2d(x, tape.constant(Tensor({3, 3, 2, 2})), tape.constant(Tensor({3})), Padding::valid));
  }

  TEST_CASE("relu values and gradient") {
    Tape tape;
    auto x = tape.input(Tensor::from({-1.0, 0.0, 2.0}), true);
    auto y = relu(x);
    CHECK(y.value().storage() == std::vector<double>{0, 0, 2});
    tape.backward(sum(y));
    auto g = tape.grad(x);
    CHECK(std::vector<double>(g.begin(), g.end()) == std::vector<double>{0, 0, 1});
  }

  TEST_CASE("relu of negatives is zero with zero gradient") {
    Tape tape;
    auto x = tape.input(Tensor::from({-3.0, -0.5}), true);
    tape.backward(sum(relu(x)));
    for (double g : tape.grad(x)) CHECK(g == 0.0);
  }

  TEST_CASE("maxpool basics") {
    Tape tape;
    auto c = maxpool2d(tape.constant(Tensor({3, 3, 1}, 2.5)));
    for (double v : c.value().data()) CHECK(v == 2.5);
    auto w = maxpool2d(tape.constant(Tensor({2, 2, 1}, std::vector<double>{1, 2, 3, 4})), 2, 1, Padding::valid);
    CHECK(w.value().storage() == std::vector<double>{4});
    CHECK_THROWS(maxpool2d(tape.constant(Tensor({1, 3, 1})), 2, 1, Padding::valid));
  }

  TEST_CASE("maxpool matches the window-max oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor({6, 6, 2}, rng);
      Tape tape;
      CHECK(maxpool2d(tape.constant(x)).value() == pool_oracle(x));
    }
  }

  TEST_CASE("maxpool ties send the gradient to the first element") {
    Tape tape;
    auto x = tape.input(Tensor({2, 2, 1}, 1.0), true);
    tape.backward(element(maxpool2d(x, 2, 1, Padding::valid), 0));
    auto g = tape.grad(x);
    CHECK(std::vector<double>(g.begin(), g.end()) == std::vector<double>{1, 0, 0, 0});
  }

  TEST_CASE("softmax is stable and normalised") {
    Tape tape;
    auto a = softmax(tape.constant(Tensor::from({0.0, 0.0})));
    CHECK(a.value().storage() == std::vector<double>{0.5, 0.5});
    auto b = softmax(tape.constant(Tensor::from({1000.0, 0.0})));
    CHECK(b.value()[0] == doctest::Approx(1.0));
    CHECK(b.value()[1] == doctest::Approx(0.0));
    Rng rng(14);
    auto c = softmax(tape.constant(random_tensor({4, 3, 5}, rng, -5, 5)));
    for (std::size_t i = 0; i < 12; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(c.value()[i * 5 + j] >= 0.0);
        s += c.value()[i * 5 + j];
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("dense matches a dot-product oracle") {
    Tape tape;
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    Tensor x = Tensor::from({1.5, -2.0, 0.25});
    CHECK(dense(tape.constant(x), tape.constant(eye), tape.constant(Tensor({3}))).value() == x);
    Tensor bias = Tensor::from({4, 5});
    CHECK(dense(tape.constant(x), tape.constant(Tensor({3, 2})), tape.constant(bias)).value() == bias);

    Rng rng(15);
    Tensor in = random_tensor({4}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
    auto y = dense(tape.constant(in), tape.constant(w), tape.constant(b));
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = b[o];
      for (std::size_t f = 0; f < 4; ++f) acc += in[f] * w[f * 3 + o];
      CHECK(y.value()[o] == doctest::Approx(acc).epsilon(1e-14));
    }
    CHECK_THROWS(dense(tape.constant(in), tape.constant(Tensor({3, 3})), tape.constant(b)));
  }

  TEST_CASE("backward trivial cases") {
    Tape tape;
    auto x = tape.input(Tensor::from({1.0, 2.0, 3.0}), true);
    tape.backward(sum(x));
    for (double g : tape.grad(x)) CHECK(g == 1.0);
    Tape t2;
    auto y = t2.input(Tensor::from({1.0, 2.0}), true);
    t2.backward(sum(scale(y, 0.0)));
    for (double g : t2.grad(y)) CHECK(g == 0.0);
  }

  TEST_CASE("adam single step closed form") {
    std::vector<double> w{0.0}, g{1.0}, m{0.0}, v{0.0};
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.0};
    adam_update(w, g, m, v, cfg, 1);
    // m_hat = 1, v_hat = 1.
    CHECK(w[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    std::vector<double> w2{0.7}, z{0.0}, m2{0.0}, v2{0.0};
    adam_update(w2, z, m2, v2, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0}, 1);
    CHECK(w2[0] == 0.7);
  }

  TEST_CASE("grad_check is exact on linear functions and skips kinks") {
    Rng rng(16);
    Tensor c = random_tensor({6}, rng);
    auto lin = [&](Tape& t, std::span<const Var> in) { return sum(mul(in[0], t.constant(c))); };
    auto rep = grad_check(lin, {random_tensor({6}, rng)});
    CHECK(rep.passed());
    CHECK(rep.max_rel_error < 1e-9);

    auto kink = [](Tape&, std::span<const Var> in) { return sum(relu(in[0])); };
    auto r2 = grad_check(kink, {Tensor::from({0.0, 1e-7, 1.0, -1.0})});
    CHECK(r2.passed());
    CHECK(r2.skipped >= 1);
  }

  TEST_CASE("elementwise op gradients") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0);
      Rng wr(trial);
      auto f = [&](Tape& t, std::span<const Var> in) {
        Var x = in[0], y = in[1];
        Var terms[] = {add(x, y), sub(x, y), mul(x, y), div(x, y), square(x), scale(x, -1.5), add_scalar(x, 0.3),
                       scale_by(x, element(y, 2)), log_clamped(y, 1e-12)};
        Rng local(trial);
        return weighted_sum(t, add_n(terms), local);
      };
      auto rep = grad_check(f, {a, b});
      CHECK_MESSAGE(rep.passed(), "trial ", trial, " err ", rep.max_rel_error);
      CHECK(rep.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("softmax and relu gradients on random inputs") {
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({2, 3, 4}, rng, -3, 3);
      auto sm = [trial](Tape& t, std::span<const Var> in) {
        Rng local(trial);
        return weighted_sum(t, softmax(in[0]), local);
      };
      auto rep = grad_check(sm, {x});
      CHECK(rep.max_rel_error < 1e-6);
      auto rl = [](Tape&, std::span<const Var> in) { return sum(relu(in[0])); };
      auto r2 = grad_check(rl, {x});
      CHECK(r2.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("composite conv relu pool softmax gradient") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor({5, 5, 2}, rng);
      Tensor k = random_tensor({3, 3, 2, 3}, rng), b = random_tensor({3}, rng, -0.1, 0.1);
      Tensor w = random_tensor({3, 2}, rng), wb = random_tensor({2}, rng);
      k.set_requires_grad(true);
      b.set_requires_grad(true);
      std::vector<Tensor*> params{&k, &b};
      auto f = [&](Tape& t, std::span<const Var> in) {
        Var h = maxpool2d(relu(conv2d(in[0], t.param(k), t.param(b), Padding::zero_same)));
        Var p = softmax(dense(global_avg_pool(h), t.constant(w), t.constant(wb)));
        return element(log_clamped(p, 1e-12), 0);
      };
      auto rep = grad_check(f, {x}, params);
      CHECK_MESSAGE(rep.passed(), "trial ", trial, " err ", rep.max_rel_error);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }

  TEST_CASE("shape plumbing ops") {
    Rng rng(20);
    Tensor x = random_tensor({3, 3, 2}, rng);
    Tape tape;
    auto v = tape.input(x, true);
    auto c0 = take_channel(v, 1);
    CHECK(c0.shape() == Shape{3, 3});
    CHECK(c0.value()[4] == x[4 * 2 + 1]);
    Var parts[] = {v, reshape(c0, Shape{3, 3, 1})};
    auto cat = concat_last(parts);
    CHECK(cat.shape() == Shape{3, 3, 3});
    CHECK(cat.value()[3 * 3 + 2] == x[3 * 2 + 1]);
    auto gap = global_avg_pool(v);
    double s = 0;
    for (std::size_t i = 0; i < 9; ++i) s += x[i * 2];
    CHECK(gap.value()[0] == doctest::Approx(s / 9));
    auto rep = grad_check(
        [](Tape& t, std::span<const Var> in) {
          Var parts2[] = {in[0], reshape(take_channel(in[0], 0), Shape{3, 3, 1})};
          Rng local(1);
          return add(weighted_sum(t, concat_last(parts2), local), mean(square(global_avg_pool(in[0]))));
        },
        {x});
    CHECK(rep.max_rel_error < 1e-6);
  }
}
