#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pimms/classifier.hpp"
#include "pimms/io.hpp"
#include "pimms/segmentation.hpp"

namespace pimms {

enum class Variant { hemis, soft, hard, online };

std::string to_string(Variant v);
/// Throws std::invalid_argument naming the accepted values.
Variant parse_variant(std::string_view s);
inline constexpr std::array<Variant, 4> kVariants = {Variant::hemis, Variant::soft, Variant::hard, Variant::online};

/// Segmenter weights plus, for every variant but hemis, the classifier that
/// routes its inputs. Offline variants carry a frozen copy of the classifier.
struct Model {
  Variant variant = Variant::soft;
  seg::SegmentationConfig seg;
  modality::ClassifierConfig fmod;
  ad::ParamSet params;

  bool uses_classifier() const { return variant != Variant::hemis; }
  io::Metadata metadata() const;
};

/// Fresh segmenter weights; `classifier` must hold fmod/ params unless the
/// variant is hemis (for online they are only the starting point).
Model make_model(Variant variant, const seg::SegmentationConfig& seg, const modality::ClassifierConfig& fmod, Rng& rng,
                 const ad::ParamSet* classifier);

void save_model(const std::filesystem::path& path, const Model& model, io::Metadata extra = {});
Model load_model(const std::filesystem::path& path);
/// Variant and architecture from checkpoint metadata, with no parameters.
Model model_from_metadata(const io::Metadata& meta);

/// Reads a classifier-only checkpoint (fmod/ params plus its config).
struct ClassifierCheckpoint {
  modality::ClassifierConfig config;
  ad::ParamSet params;
  io::Metadata metadata;
};
ClassifierCheckpoint load_classifier(const std::filesystem::path& path);
void save_classifier(const std::filesystem::path& path, const modality::ClassifierConfig& config,
                     const ad::ParamSet& params, io::Metadata extra = {});
io::Metadata classifier_metadata(const modality::ClassifierConfig& config);
modality::ClassifierConfig classifier_from_metadata(const io::Metadata& meta);

/// Scan-wise normalisation applied before both classification and routing.
std::vector<Tensor> normalize_scans(std::span<const Tensor> scans);

struct ForwardResult {
  ad::Var prediction;  // [H, W, 2]
  /// [M, N] routing scores for soft/hard/online; empty for hemis.
  std::optional<ad::Var> scores;
  /// Per-scan score columns, [M, 1] each (online only).
  std::vector<ad::Var> columns;
};

/// Full pipeline on raw scans (dropped scans already zeroed). `labels` is
/// required for hemis and ignored otherwise. `frozen_scores` short-cuts the
/// classifier for soft/hard. Online scores stay on the tape.
ForwardResult forward(ad::Tape& tape, Model& model, std::span<const Tensor> scans,
                      std::span<const ModalityLabel> labels = {}, const ModalityScores* frozen_scores = nullptr);

/// Lesion probability map [H, W, 2] without gradients.
Tensor predict(Model& model, std::span<const Tensor> scans, std::span<const ModalityLabel> labels = {});

/// Frozen classifier scores on normalised scans.
ModalityScores frozen_scores(Model& model, std::span<const Tensor> scans);

}  // namespace pimms
