#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pimms/params.hpp"
#include "pimms/routing.hpp"
#include "pimms/tape.hpp"

namespace pimms::seg {

inline constexpr std::size_t kClasses = 2;  // background, lesion
inline constexpr std::size_t kLesionChannel = 1;
inline constexpr double kDiceEps = 1e-5;

/// How missing slots enter the mean/variance fusion.
enum class StatsMode {
  /// Every slot contributes, zeroed ones through their backend.
  imputation,
  /// Only available slots contribute.
  exclusion,
};

std::string to_string(StatsMode mode);
StatsMode parse_stats_mode(std::string_view s);

/// Per-modality feature extractor: `layers` zero-padded convolutions with
/// ReLU, then a 2x2 stride-1 max pool.
struct BackendConfig {
  std::size_t layers = 2;
  std::size_t filters = 8;
  std::size_t kernel = 3;
};

/// Frontend: one hidden ReLU convolution, then a 2-channel softmax convolution.
struct FrontendConfig {
  std::size_t hidden_filters = 8;
  std::size_t hidden_kernel = 3;
  std::size_t output_kernel = 7;
};

struct SegmentationConfig {
  std::size_t modalities = kNumModalities;
  BackendConfig backend;
  FrontendConfig frontend;
  StatsMode stats_mode = StatsMode::imputation;

  void validate() const;
};

/// "phi_t1/", "phi_t2/", "phi_f/" for the canonical slots, "phi_m<k>/" beyond.
std::string backend_prefix(std::size_t m);
inline constexpr std::string_view kFrontendPrefix = "phi_seg/";

void init_segmentation(ad::ParamSet& params, const SegmentationConfig& config, Rng& rng);

/// One [H, W, K] embedding per slot, each through its own backend weights.
std::vector<ad::Var> backend_forward(ad::Tape& tape, std::span<const ad::Var> slots, const SegmentationConfig& config,
                                     ad::ParamSet& params);

/// [H, W, 2K]: per-pixel mean over the contributing embeddings in channels
/// [0, K), population variance in [K, 2K).
ad::Var abstraction(std::span<const ad::Var> embeddings, const std::vector<bool>& available, StatsMode mode);

/// [H, W, 2] per-pixel class probabilities.
ad::Var frontend_forward(ad::Var fused, const SegmentationConfig& config, ad::ParamSet& params);

/// 1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps) on the lesion channel.
ad::Var dice_loss(ad::Var prediction, const Tensor& target);

/// backend -> abstraction -> frontend for a routed input.
ad::Var segment(ad::Tape& tape, const routing::RoutedVars& routed, const SegmentationConfig& config,
                ad::ParamSet& params);

}  // namespace pimms::seg
