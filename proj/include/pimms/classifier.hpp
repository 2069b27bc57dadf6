#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "pimms/domain.hpp"
#include "pimms/params.hpp"
#include "pimms/tape.hpp"

namespace pimms::modality {

inline constexpr std::string_view kParamPrefix = "fmod/";
inline constexpr double kLogFloor = 1e-12;

/// Residual modality classifier f_mod. Stage s runs at 1/2^s resolution with
/// base_filters * 2^s channels; each block holds convs_per_block 3x3
/// convolutions and an identity (or strided 1x1) skip. A global average pool
/// and a dense head produce M logits.
struct ClassifierConfig {
  std::size_t stages = 2;
  std::size_t blocks_per_stage = 2;
  std::size_t convs_per_block = 2;
  std::size_t base_filters = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t modalities = kNumModalities;

  void validate() const;
  /// Weighted layers on the longest path (stem + block convs + head).
  std::size_t depth() const;
};

void init_classifier(ad::ParamSet& params, const ClassifierConfig& config, Rng& rng);

/// Zero-mean, unit-variance rescaling over the whole patch. Constant scans
/// (including dropped, all-zero ones) map to all zeros.
Tensor normalize_scan(const Tensor& scan);

/// Probability vector [M] for one [H, W] scan.
ad::Var classify(ad::Tape& tape, ad::Var scan, const ClassifierConfig& config, ad::ParamSet& params);
Tensor classify(const Tensor& scan, const ClassifierConfig& config, ad::ParamSet& params);

/// [M, N] scores, column n from scan n.
ad::Var classify_set(ad::Tape& tape, std::span<const ad::Var> scans, const ClassifierConfig& config,
                     ad::ParamSet& params);
ModalityScores classify_set(const ScanSet& scans, const ClassifierConfig& config, ad::ParamSet& params);

/// Mean over columns of -sum_m y_m log(max(S_m, 1e-12)).
ad::Var class_loss(ad::Var scores, std::span<const ModalityLabel> labels);
double class_loss(const ModalityScores& scores, std::span<const ModalityLabel> labels);

}  // namespace pimms::modality
