#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pimms/domain.hpp"
#include "pimms/tape.hpp"

namespace pimms::routing {

/// M-slot stack in canonical (T1, T2, FLAIR) order.
struct RoutedInput {
  std::vector<Tensor> slots;
  std::vector<bool> available;
};

struct RoutedVars {
  std::vector<ad::Var> slots;
  std::vector<bool> available;
};

// Every slot is a per-pixel sum over contributing scans. Terms are added in
// ascending value order, which makes each slot bitwise independent of the
// order in which scans are supplied.
//
// An all-zero scan is treated as missing: it never marks a slot available.

/// x_hat_m = sum_n S_mn x_n. Differentiable in both the scans and S. All
/// slots are marked available.
RoutedVars route_soft(ad::Tape& tape, std::span<const ad::Var> scans, ad::Var scores);
/// Scan n is added to slot `slot_of_scan[n]`.
RoutedVars route_assign(ad::Tape& tape, std::span<const ad::Var> scans, std::span<const std::size_t> slot_of_scan,
                        std::size_t modalities);
/// route_assign with each scan sent to its column argmax (ties -> lowest slot).
RoutedVars route_hard(ad::Tape& tape, std::span<const ad::Var> scans, const ModalityScores& scores);
RoutedVars route_labels(ad::Tape& tape, std::span<const ad::Var> scans, std::span<const ModalityLabel> labels);

RoutedInput route_soft(const ScanSet& scans, const ModalityScores& scores);
RoutedInput route_hard(const ScanSet& scans, const ModalityScores& scores);
RoutedInput route_labels(const ScanSet& scans, std::span<const ModalityLabel> labels);

std::vector<ModalityLabel> argmax_labels(const ModalityScores& scores);

}  // namespace pimms::routing
