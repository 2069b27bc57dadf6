#include "pimms/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "pimms/evaluation.hpp"
#include "pimms/grad_check.hpp"
#include "pimms/ops.hpp"
#include "pimms/training.hpp"

namespace pimms::verify {

using ad::Tape;
using ad::Var;

Level parse_level(std::string_view s) {
  if (s == "quick") return Level::quick;
  if (s == "full") return Level::full;
  throw std::invalid_argument("unknown verify level '" + std::string(s) + "' (expected quick or full)");
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

Tensor random_mask(Shape shape, Rng& rng, double p) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, 0.0, 1.0) < p ? 1.0 : 0.0;
  return t;
}

// Scalar probe of a tensor-valued op: sum(out * w) with fixed random weights.
Var probe(Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, out.tape().constant(random_tensor(out.shape(), rng))));
}

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(Tape&, std::span<const Var>)> body;
};

std::vector<OpCase> op_cases() {
  using V = std::span<const Var>;
  std::vector<OpCase> c;
  c.push_back({"conv2d same", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({5, 5, 2}, r), random_tensor({3, 3, 2, 3}, r),
                                            random_tensor({3}, r)};
               },
               [](Tape&, V x) { return ad::conv2d(x[0], x[1], x[2], ad::Padding::zero_same); }});
  c.push_back({"conv2d valid stride 2", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({6, 7, 2}, r), random_tensor({3, 3, 2, 2}, r),
                                            random_tensor({2}, r)};
               },
               [](Tape&, V x) { return ad::conv2d(x[0], x[1], x[2], ad::Padding::valid, 2); }});
  c.push_back({"relu", [](Rng& r) { return std::vector<Tensor>{random_tensor({4, 5}, r)}; },
               [](Tape&, V x) { return ad::relu(x[0]); }});
  c.push_back({"maxpool2d", [](Rng& r) { return std::vector<Tensor>{random_tensor({5, 4, 2}, r)}; },
               [](Tape&, V x) { return ad::maxpool2d(x[0]); }});
  c.push_back({"softmax", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r, -2, 2)}; },
               [](Tape&, V x) { return ad::add(ad::softmax(x[0]), ad::softmax(x[0], 0)); }});
  c.push_back({"dense", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({5}, r), random_tensor({5, 3}, r), random_tensor({3}, r)};
               },
               [](Tape&, V x) { return ad::dense(x[0], x[1], x[2]); }});
  c.push_back({"add sub mul", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({3, 3}, r), random_tensor({3, 3}, r)};
               },
               [](Tape&, V x) { return ad::mul(ad::add(x[0], x[1]), ad::sub(x[0], x[1])); }});
  c.push_back({"div", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({3, 3}, r), random_tensor({3, 3}, r, 0.5, 2.0)};
               },
               [](Tape&, V x) { return ad::div(x[0], x[1]); }});
  c.push_back({"add_n scale add_scalar", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({4}, r), random_tensor({4}, r), random_tensor({4}, r)};
               },
               [](Tape&, V x) { return ad::add_scalar(ad::scale(ad::add_n(x), -1.7), 0.3); }});
  c.push_back({"scale_by square", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({1}, r)};
               },
               [](Tape&, V x) { return ad::square(ad::scale_by(x[0], x[1])); }});
  c.push_back({"log_clamped", [](Rng& r) { return std::vector<Tensor>{random_tensor({6}, r, 0.05, 2.0)}; },
               [](Tape&, V x) { return ad::log_clamped(x[0], 1e-3); }});
  c.push_back({"sum mean element", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; },
               [](Tape&, V x) {
                 return ad::add(ad::add(ad::sum(x[0]), ad::mean(ad::square(x[0]))), ad::element(x[0], 5));
               }});
  c.push_back({"reshape take_channel", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 4, 2}, r)}; },
               [](Tape&, V x) { return ad::reshape(ad::take_channel(x[0], 1), Shape{12}); }});
  c.push_back({"concat_last", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({3, 1}, r), random_tensor({3, 2}, r)};
               },
               [](Tape&, V x) { return ad::concat_last(x); }});
  c.push_back({"global_avg_pool", [](Rng& r) { return std::vector<Tensor>{random_tensor({4, 3, 2}, r)}; },
               [](Tape&, V x) { return ad::global_avg_pool(x[0]); }});
  c.push_back({"dice_loss", [](Rng& r) { return std::vector<Tensor>{random_tensor({4, 4, 2}, r, -2, 2)}; },
               [](Tape&, V x) {
                 Rng m(7);
                 return seg::dice_loss(ad::softmax(x[0]), random_mask({4, 4}, m, 0.4));
               }});
  c.push_back({"class_loss", [](Rng& r) { return std::vector<Tensor>{random_tensor({3, 3}, r, -2, 2)}; },
               [](Tape&, V x) {
                 std::vector<ModalityLabel> y{ModalityLabel(2), ModalityLabel(0), ModalityLabel(1)};
                 return modality::class_loss(ad::softmax(x[0], 0), y);
               }});
  c.push_back({"route_soft", [](Rng& r) {
                 return std::vector<Tensor>{random_tensor({4, 4}, r), random_tensor({4, 4}, r),
                                            random_tensor({3, 2}, r, -2, 2)};
               },
               [](Tape& t, V x) {
                 std::vector<Var> scans{x[0], x[1]};
                 auto routed = routing::route_soft(t, scans, ad::softmax(x[2], 0));
                 return ad::concat_last(std::vector<Var>{ad::reshape(routed.slots[0], Shape{4, 4, 1}),
                                                         ad::reshape(routed.slots[1], Shape{4, 4, 1}),
                                                         ad::reshape(routed.slots[2], Shape{4, 4, 1})});
               }});
  for (auto mode : {seg::StatsMode::imputation, seg::StatsMode::exclusion})
    c.push_back({"abstraction " + seg::to_string(mode), [](Rng& r) {
                   return std::vector<Tensor>{random_tensor({3, 3, 2}, r), random_tensor({3, 3, 2}, r),
                                              random_tensor({3, 3, 2}, r)};
                 },
                 [mode](Tape&, V x) {
                   std::vector<Var> e(x.begin(), x.end());
                   return seg::abstraction(e, {true, false, true}, mode);
                 }});
  return c;
}

Model micro_model(Variant variant, std::uint64_t seed, std::size_t size = 8) {
  seg::SegmentationConfig sc;
  sc.backend = {1, 2, 3};
  sc.frontend = {2, 3, 3};
  modality::ClassifierConfig fc;
  fc.stages = 1;
  fc.blocks_per_stage = 1;
  fc.convs_per_block = 1;
  fc.base_filters = 2;
  fc.height = fc.width = size;
  Rng rng(seed);
  ad::ParamSet fmod;
  modality::init_classifier(fmod, fc, rng);
  return make_model(variant, sc, fc, rng, variant == Variant::hemis ? nullptr : &fmod);
}

std::vector<Tensor> random_scans(Rng& rng, std::size_t n, std::size_t size) {
  std::vector<Tensor> scans;
  for (std::size_t i = 0; i < n; ++i) scans.push_back(random_tensor({size, size}, rng, 0.0, 1.0));
  return scans;
}

std::vector<std::size_t> random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

CheckResult check_ops(std::size_t instances) {
  CheckResult r{"gradients: primitive ops", true, "", 0};
  double worst = 0.0;
  std::size_t skipped = 0;
  for (const auto& op : op_cases()) {
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(derive_seed(11, op.name, i));
      const auto body = op.body;
      const std::uint64_t w = derive_seed(12, op.name, i);
      auto rep = ad::grad_check([&](Tape& t, std::span<const Var> x) { return probe(body(t, x), w); },
                                op.inputs(rng));
      worst = std::max(worst, rep.max_rel_error);
      skipped += rep.skipped;
      if (!rep.passed()) {
        r.passed = false;
        r.detail = op.name + " instance " + std::to_string(i) + " rel error " + fmt("%.3g", rep.max_rel_error);
        return r;
      }
    }
  }
  r.detail = "max rel error " + fmt("%.3g", worst) + ", " + std::to_string(skipped) + " kink probes skipped";
  return r;
}

CheckResult check_network(std::size_t instances) {
  CheckResult r{"gradients: micro PIMMS network", true, "", 0};
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(21, "net", i));
    Model model = micro_model(Variant::online, derive_seed(22, "net", i));
    const std::size_t n = 1 + uniform_index(rng, 3);
    const auto scans = random_scans(rng, n, 8);
    std::vector<ModalityLabel> labels;
    for (auto m : random_perm(rng, 3)) labels.emplace_back(m);
    labels.erase(labels.begin() + static_cast<std::ptrdiff_t>(n), labels.end());
    const Tensor mask = random_mask({8, 8}, rng, 0.3);
    const double lambda = uniform(rng, 0.1, 1.0);
    std::vector<Tensor*> params;
    for (auto& e : model.params) params.push_back(&e.tensor);
    auto rep = ad::grad_check(
        [&](Tape& t, std::span<const Var>) {
          ForwardResult f = forward(t, model, scans, labels);
          return ad::add(seg::dice_loss(f.prediction, mask), ad::scale(modality::class_loss(*f.scores, labels), lambda));
        },
        {}, params);
    worst = std::max(worst, rep.max_rel_error);
    if (!rep.passed()) {
      r.passed = false;
      r.detail = "instance " + std::to_string(i) + " rel error " + fmt("%.3g", rep.max_rel_error);
      return r;
    }
  }
  r.detail = std::to_string(instances) + " instances, max rel error " + fmt("%.3g", worst);
  return r;
}

CheckResult check_permutation(std::size_t sets) {
  CheckResult r{"permutation invariance", true, "", 0};
  Model soft = micro_model(Variant::soft, 31, 16);
  double worst = 0.0;
  for (std::size_t i = 0; i < sets && r.passed; ++i) {
    Rng rng(derive_seed(32, "perm", i));
    const std::size_t n = 1 + i % 3;
    const auto scans = random_scans(rng, n, 16);
    const auto perm = random_perm(rng, n);
    std::vector<Tensor> permuted;
    for (auto p : perm) permuted.push_back(scans[p]);
    const Tensor a = predict(soft, scans), b = predict(soft, permuted);
    double rel = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
      rel = std::max(rel, std::abs(a[k] - b[k]) / std::max(1e-300, std::max(std::abs(a[k]), std::abs(b[k]))));
    worst = std::max(worst, rel);
    if (rel >= 1e-9) {
      r.passed = false;
      r.detail = "soft output changed by " + fmt("%.3g", rel) + " on set " + std::to_string(i);
    }
    // Hard and label routing must be exactly invariant.
    ScanSet set(scans), pset(permuted);
    Tensor s = random_tensor({3, n}, rng, 0.0, 1.0);
    ModalityScores scores(s);
    const auto h1 = routing::route_hard(set, scores), h2 = routing::route_hard(pset, scores.permuted_columns(perm));
    std::vector<ModalityLabel> labels, plabels;
    for (std::size_t k = 0; k < n; ++k) labels.emplace_back(uniform_index(rng, 3));
    for (auto p : perm) plabels.push_back(labels[p]);
    const auto l1 = routing::route_labels(set, labels), l2 = routing::route_labels(pset, plabels);
    for (std::size_t m = 0; m < 3; ++m)
      if (!(h1.slots[m] == h2.slots[m]) || !(l1.slots[m] == l2.slots[m]) || h1.available != h2.available ||
          l1.available != l2.available) {
        r.passed = false;
        r.detail = "hard/label routing not bitwise invariant on set " + std::to_string(i);
      }
  }
  if (r.passed) r.detail = std::to_string(sets) + " sets, max soft rel diff " + fmt("%.3g", worst);
  return r;
}

CheckResult check_hard_hemis(std::size_t trials) {
  CheckResult r{"hard routing equals label routing", true, "", 0};
  Rng rng(41);
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 3);
    ScanSet set(random_scans(rng, n, 6));
    Tensor s = random_tensor({3, n}, rng, 0.0, 1.0);
    if (i % 5 == 0) s[0] = s[n];  // exercise ties
    ModalityScores scores(s);
    const auto a = routing::route_hard(set, scores);
    const auto b = routing::route_labels(set, routing::argmax_labels(scores));
    for (std::size_t m = 0; m < 3; ++m)
      if (!(a.slots[m] == b.slots[m]) || a.available != b.available) {
        r.passed = false;
        r.detail = "mismatch on trial " + std::to_string(i);
        return r;
      }
  }
  // With one-hot scores a hard model and a hemis model sharing weights agree bitwise.
  Model hard = micro_model(Variant::hard, 42, 8);
  Model hemis;
  hemis.variant = Variant::hemis;
  hemis.seg = hard.seg;
  for (const auto& e : hard.params)
    if (e.name.rfind(modality::kParamPrefix, 0) != 0) hemis.params.add(e.name, e.tensor);
  for (std::size_t i = 0; i < 50; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 3);
    const auto scans = random_scans(rng, n, 8);
    const auto perm = random_perm(rng, 3);
    std::vector<ModalityLabel> labels;
    Tensor onehot(Shape{3, n});
    for (std::size_t k = 0; k < n; ++k) {
      labels.emplace_back(perm[k]);
      onehot[perm[k] * n + k] = 1.0;
    }
    ModalityScores scores(onehot);
    Tape t1, t2;
    const Tensor a = forward(t1, hard, scans, {}, &scores).prediction.value();
    const Tensor b = forward(t2, hemis, scans, labels).prediction.value();
    if (!(a == b)) {
      r.passed = false;
      r.detail = "hard and hemis forward passes differ on trial " + std::to_string(i);
      return r;
    }
  }
  r.detail = std::to_string(trials) + " score matrices, 50 one-hot forward passes";
  return r;
}

double brute_asd(const Tensor& a, const Tensor& b) {
  const auto ba = eval::boundary_pixels(a), bb = eval::boundary_pixels(b);
  const std::size_t W = a.dim(1);
  auto nearest = [&](std::size_t p, const std::vector<std::size_t>& to) {
    double best = INFINITY;
    for (auto q : to) {
      const double dy = double(p / W) - double(q / W), dx = double(p % W) - double(q % W);
      best = std::min(best, dy * dy + dx * dx);
    }
    return std::sqrt(best);
  };
  double total = 0.0;
  for (auto p : ba) total += nearest(p, bb);
  for (auto p : bb) total += nearest(p, ba);
  return total / double(ba.size() + bb.size());
}

// Two-sided p-value by enumerating every sign pattern of the nonzero differences.
double enumerate_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (b[i] - a[i] != 0.0) d.push_back(b[i] - a[i]);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double wplus = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) wplus += rank[i];
  double lo = 0, hi = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += rank[i];
    lo += w <= wplus + 1e-9;
    hi += w >= wplus - 1e-9;
  }
  return std::min(1.0, 2.0 * std::min(lo, hi) / double(std::size_t{1} << n));
}

CheckResult check_metrics(std::size_t masks, std::size_t max_n, std::size_t wilcoxon_trials) {
  CheckResult r{"metric oracles", true, "", 0};
  Rng rng(51);
  for (std::size_t i = 0; i < masks; ++i) {
    const std::size_t H = 3 + uniform_index(rng, 8), W = 3 + uniform_index(rng, 8);
    Tensor a = random_mask({H, W}, rng, uniform(rng, 0.1, 0.7)), b = random_mask({H, W}, rng, uniform(rng, 0.1, 0.7));
    double inter = 0, pa = 0, pb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      inter += a[k] * b[k];
      pa += a[k];
      pb += b[k];
    }
    const double dice = pa + pb == 0 ? 1.0 : 2 * inter / (pa + pb);
    if (eval::dice_score(a, b) != dice) {
      r.passed = false;
      r.detail = "dice mismatch on mask " + std::to_string(i);
      return r;
    }
    if (pa == 0 || pb == 0) continue;
    if (eval::avg_symmetric_distance(a, b) != brute_asd(a, b)) {
      r.passed = false;
      r.detail = "ASD mismatch on mask " + std::to_string(i);
      return r;
    }
  }
  for (std::size_t n = 1; n <= max_n; ++n)
    for (std::size_t t = 0; t < wilcoxon_trials; ++t) {
      std::vector<double> a(n), b(n);
      for (std::size_t k = 0; k < n; ++k) {
        a[k] = std::round(uniform(rng, 0, 10));
        // The first difference is never zero, so every trial has n >= 1.
        b[k] = a[k] + (k == 0 ? 1.0 + uniform_index(rng, 4) : std::round(uniform(rng, -4, 4)));
      }
      const auto w = eval::wilcoxon_signed_rank(a, b);
      if (std::abs(w.p - enumerate_p(a, b)) > 1e-12) {
        r.passed = false;
        r.detail = "Wilcoxon exact p differs from enumeration at n=" + std::to_string(n);
        return r;
      }
    }
  r.detail = std::to_string(masks) + " masks, Wilcoxon n<=" + std::to_string(max_n);
  return r;
}

CheckResult check_schedule() {
  CheckResult r{"lambda schedule", true, "", 0};
  const double a = train::lambda_schedule(0, 1e-4), b = train::lambda_schedule(10000, 1e-4);
  r.passed = a == 1.0 && std::abs(b - std::exp(-1.0)) <= 1e-12 && train::lambda_schedule(123456, 0.0) == 1.0;
  r.detail = "lambda(10000) = " + fmt("%.15f", b);
  return r;
}

CheckResult check_curriculum(std::size_t draws) {
  CheckResult r{"curriculum dropout frequencies", true, "", 0};
  train::CurriculumConfig cfg;
  for (std::size_t A = 1; A <= 3; ++A) {
    Rng rng(61 + A);
    const auto p = cfg.count_probabilities(A);
    std::vector<double> counts(A, 0.0);
    const std::vector<bool> available(A, true);
    for (std::size_t i = 0; i < draws; ++i) {
      const auto drop = train::curriculum_dropout(available, cfg, rng);
      const auto k = static_cast<std::size_t>(std::count(drop.begin(), drop.end(), true));
      if (k >= A) {
        r.passed = false;
        r.detail = "every scan dropped";
        return r;
      }
      counts[k] += 1;
    }
    for (std::size_t k = 0; k < A; ++k) {
      const double sigma = std::sqrt(draws * p[k] * (1 - p[k]));
      if (std::abs(counts[k] - draws * p[k]) > 3 * sigma + 1e-9) {
        r.passed = false;
        r.detail = "A=" + std::to_string(A) + " k=" + std::to_string(k) + " frequency off by more than 3 sigma";
        return r;
      }
    }
  }
  r.detail = std::to_string(draws) + " draws per availability count";
  return r;
}

}  // namespace

std::vector<CheckResult> run_suite(Level level, const std::function<void(const CheckResult&)>& on_result) {
  const bool full = level == Level::full;
  std::vector<std::function<CheckResult()>> checks = {
      [&] { return check_ops(full ? 100 : 20); },
      [&] { return check_network(full ? 100 : 10); },
      [&] { return check_permutation(full ? 200 : 100); },
      [&] { return check_hard_hemis(full ? 1000 : 500); },
      [&] { return check_metrics(full ? 500 : 200, 10, full ? 20 : 5); },
      [&] { return check_schedule(); },
  };
  if (full) checks.push_back([] { return check_curriculum(100000); });
  std::vector<CheckResult> results;
  for (const auto& check : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace pimms::verify
