#include "pimms/routing.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace pimms::routing {

using ad::Var;

namespace {

void check_scans(std::span<const Var> scans) {
  if (scans.empty()) throw std::invalid_argument("routing: empty scan set");
  for (const auto& s : scans) {
    if (s.shape().size() != 2 || s.shape() != scans[0].shape())
      throw std::invalid_argument("routing: scans must share one [H, W] shape");
  }
}

// Weighted per-pixel sum of `scans` with weights `w` (one per scan), terms
// added in ascending order.
Tensor ordered_mix(std::span<const Var> scans, std::span<const double> w) {
  Tensor out(scans[0].shape());
  std::vector<double> terms(scans.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::size_t k = 0;
    for (std::size_t n = 0; n < scans.size(); ++n)
      if (w[n] != 0.0) terms[k++] = w[n] * scans[n].value()[p];
    std::sort(terms.begin(), terms.begin() + static_cast<long>(k));
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += terms[i];
    out[p] = acc;
  }
  return out;
}

RoutedInput to_tensors(const RoutedVars& r) {
  RoutedInput out;
  for (const auto& v : r.slots) out.slots.push_back(v.value());
  out.available = r.available;
  return out;
}

std::vector<Var> as_constants(ad::Tape& tape, const ScanSet& scans) {
  std::vector<Var> vars;
  for (const auto& s : scans.scans()) vars.push_back(tape.constant(s));
  return vars;
}

}  // namespace

RoutedVars route_soft(ad::Tape& tape, std::span<const Var> scans, Var scores) {
  check_scans(scans);
  const Shape& ss = scores.shape();
  if (ss.size() != 2 || ss[1] != scans.size())
    throw std::invalid_argument("route_soft: scores " + shape_string(ss) + " do not have one column per scan (" +
                                std::to_string(scans.size()) + ")");
  const std::size_t M = ss[0], N = ss[1];
  std::vector<Var> inputs(scans.begin(), scans.end());
  inputs.push_back(scores);
  std::vector<std::size_t> scan_ids;
  for (const auto& s : scans) scan_ids.push_back(s.id());
  const std::size_t score_id = scores.id();

  RoutedVars out;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<double> w(N);
    for (std::size_t n = 0; n < N; ++n) w[n] = scores.value()[m * N + n];
    // Zero weights still need their dS entry, so mix with every term present.
    Tensor mixed(scans[0].shape());
    {
      std::vector<double> terms(N);
      for (std::size_t p = 0; p < mixed.size(); ++p) {
        for (std::size_t n = 0; n < N; ++n) terms[n] = w[n] * scans[n].value()[p];
        std::sort(terms.begin(), terms.end());
        double acc = 0.0;
        for (double t : terms) acc += t;
        mixed[p] = acc;
      }
    }
    out.slots.push_back(tape.record("route_soft", std::move(mixed), inputs, [=](ad::Tape& t, std::size_t self) {
      auto g = t.grad_buffer(self);
      const Tensor& S = t.value(score_id);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t id = scan_ids[n];
        if (t.needs_grad(id)) {
          auto gx = t.grad_buffer(id);
          const double s = S[m * N + n];
          for (std::size_t p = 0; p < g.size(); ++p) gx[p] += s * g[p];
        }
      }
      if (t.needs_grad(score_id)) {
        auto gs = t.grad_buffer(score_id);
        for (std::size_t n = 0; n < N; ++n) {
          const Tensor& x = t.value(scan_ids[n]);
          double acc = 0.0;
          for (std::size_t p = 0; p < g.size(); ++p) acc += g[p] * x[p];
          gs[m * N + n] += acc;
        }
      }
    }));
    out.available.push_back(true);
  }
  return out;
}

RoutedVars route_assign(ad::Tape& tape, std::span<const Var> scans, std::span<const std::size_t> slot_of_scan,
                        std::size_t modalities) {
  check_scans(scans);
  if (slot_of_scan.size() != scans.size())
    throw std::invalid_argument("routing: " + std::to_string(slot_of_scan.size()) + " assignments for " +
                                std::to_string(scans.size()) + " scans");
  for (auto m : slot_of_scan)
    if (m >= modalities) throw std::invalid_argument("routing: slot index out of range");
  const std::size_t N = scans.size();
  std::vector<std::size_t> scan_ids;
  for (const auto& s : scans) scan_ids.push_back(s.id());
  std::vector<Var> inputs(scans.begin(), scans.end());

  RoutedVars out;
  for (std::size_t m = 0; m < modalities; ++m) {
    std::vector<double> w(N, 0.0);
    bool available = false;
    for (std::size_t n = 0; n < N; ++n) {
      if (slot_of_scan[n] != m) continue;
      w[n] = 1.0;
      available = available || !scans[n].value().all_zero();
    }
    Tensor mixed = ordered_mix(scans, w);
    out.slots.push_back(tape.record("route_assign", std::move(mixed), inputs, [=](ad::Tape& t, std::size_t self) {
      auto g = t.grad_buffer(self);
      for (std::size_t n = 0; n < N; ++n) {
        if (w[n] == 0.0 || !t.needs_grad(scan_ids[n])) continue;
        auto gx = t.grad_buffer(scan_ids[n]);
        for (std::size_t p = 0; p < g.size(); ++p) gx[p] += g[p];
      }
    }));
    out.available.push_back(available);
  }
  return out;
}

RoutedVars route_hard(ad::Tape& tape, std::span<const Var> scans, const ModalityScores& scores) {
  if (scores.scans() != scans.size())
    throw std::invalid_argument("route_hard: " + std::to_string(scores.scans()) + " score columns for " +
                                std::to_string(scans.size()) + " scans");
  std::vector<std::size_t> slots;
  for (std::size_t n = 0; n < scores.scans(); ++n) slots.push_back(scores.argmax(n));
  return route_assign(tape, scans, slots, scores.modalities());
}

RoutedVars route_labels(ad::Tape& tape, std::span<const Var> scans, std::span<const ModalityLabel> labels) {
  if (labels.size() != scans.size())
    throw std::invalid_argument("route_labels: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(scans.size()) + " scans");
  if (labels.empty()) throw std::invalid_argument("route_labels: empty scan set");
  std::vector<std::size_t> slots;
  for (const auto& l : labels) slots.push_back(l.index());
  return route_assign(tape, scans, slots, labels.front().modalities());
}

RoutedInput route_soft(const ScanSet& scans, const ModalityScores& scores) {
  ad::Tape tape;
  auto vars = as_constants(tape, scans);
  return to_tensors(route_soft(tape, vars, tape.constant(scores.matrix())));
}

RoutedInput route_hard(const ScanSet& scans, const ModalityScores& scores) {
  ad::Tape tape;
  auto vars = as_constants(tape, scans);
  return to_tensors(route_hard(tape, vars, scores));
}

RoutedInput route_labels(const ScanSet& scans, std::span<const ModalityLabel> labels) {
  ad::Tape tape;
  auto vars = as_constants(tape, scans);
  return to_tensors(route_labels(tape, vars, labels));
}

std::vector<ModalityLabel> argmax_labels(const ModalityScores& scores) {
  std::vector<ModalityLabel> out;
  for (std::size_t n = 0; n < scores.scans(); ++n) out.emplace_back(scores.argmax(n), scores.modalities());
  return out;
}

}  // namespace pimms::routing
