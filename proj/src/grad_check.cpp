#include "pimms/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pimms::ad {

namespace {

struct Eval {
  double value = 0.0;
  std::vector<std::uint64_t> branches;
};

Eval evaluate(const Objective& objective, const std::vector<Tensor>& inputs) {
  Tape tape;
  tape.set_branch_tracking(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.input(t, false));
  Var out = objective(tape, vars);
  return Eval{out.value().item(), tape.branches()};
}

}  // namespace

GradCheckReport grad_check(const Objective& objective, std::vector<Tensor> inputs, std::span<Tensor* const> params,
                           const GradCheckOptions& options) {
  for (Tensor* p : params) {
    if (!p->requires_grad()) throw std::invalid_argument("grad_check: parameter without requires_grad");
    p->zero_grad();
    p->ensure_grad();
  }

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  std::vector<std::uint64_t> base_branches;
  {
    Tape tape;
    tape.set_branch_tracking(true);
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t, true));
    Var out = objective(tape, vars);
    if (out.value().size() != 1) throw std::invalid_argument("grad_check: objective must be scalar");
    base_branches = tape.branches();
    tape.backward(out);
    for (const auto& v : vars) {
      auto g = tape.grad(v);
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(v.value().size(), 0.0);
    }
    for (Tensor* p : params) {
      auto g = p->grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  GradCheckReport report;
  auto probe = [&](std::vector<double>& storage, std::size_t i, const std::vector<double>& grads,
                   const std::string& label) {
    const double x = storage[i];
    const double h = options.step * std::max(1.0, std::abs(x));
    storage[i] = x + h;
    const Eval plus = evaluate(objective, inputs);
    storage[i] = x - h;
    const Eval minus = evaluate(objective, inputs);
    storage[i] = x;
    if (plus.branches != base_branches || minus.branches != base_branches) {
      ++report.skipped;
      return;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double a = grads[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (!(rel < options.tolerance)) report.failures.push_back(GradCheckEntry{label, i, a, numeric, rel});
  };

  auto coords = [&](std::size_t n) {
    std::vector<std::size_t> idx;
    const std::size_t limit = options.max_coords_per_tensor;
    if (limit == 0 || n <= limit) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t k = 0; k < limit; ++k) idx.push_back(k * n / limit);
    }
    return idx;
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : coords(inputs[k].size()))
      probe(inputs[k].storage(), i, analytic[k], "input" + std::to_string(k));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i : coords(params[k]->size()))
      probe(params[k]->storage(), i, analytic[inputs.size() + k], "param" + std::to_string(k));
  }
  return report;
}

}  // namespace pimms::ad
