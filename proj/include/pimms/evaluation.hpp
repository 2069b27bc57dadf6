#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pimms/model.hpp"
#include "pimms/synth.hpp"

namespace pimms::eval {

/// 2|P & G| / (|P| + |G|); two empty masks score 1.
double dice_score(const Tensor& pred, const Tensor& gt);

/// Mask pixels with at least one 4-neighbour outside the mask (image border
/// counts as outside), as flat indices in raster order.
std::vector<std::size_t> boundary_pixels(const Tensor& mask);

/// Mean Euclidean distance from each boundary pixel of one mask to the other
/// mask's boundary, pooled over both directions. Throws on an empty mask.
double avg_symmetric_distance(const Tensor& pred, const Tensor& gt, double spacing = 1.0);

struct WilcoxonResult {
  double w = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double p = 1.0;  // two-sided
  std::size_t n = 0;  // nonzero differences
  bool exact = false;
};

inline constexpr std::size_t kExactLimit = 25;
inline constexpr double kSignificance = 0.01;

/// Signed-rank test on b - a with midranks for ties. Exact null distribution
/// up to kExactLimit nonzero pairs, tie-corrected normal approximation above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Binary lesion mask [H, W] from a [H, W, 2] probability map (p > 0.5).
Tensor threshold(const Tensor& probabilities);

struct Pattern {
  std::vector<bool> present;
  /// "110" style, slot order T1 T2 FLAIR.
  std::string code() const;
  std::size_t count() const;
};

/// Every non-empty availability pattern; for three modalities the row order
/// is 111, 110, 011, 101, 100, 010, 001.
std::vector<Pattern> all_patterns(std::size_t modalities);

struct Cell {
  std::vector<double> dice;  // per subject, aligned with SubsetGrid::subjects
  std::vector<double> asd;   // NaN where either mask is empty
  double median_dice = 0.0;
  double mean_dice = 0.0;
  double mean_asd = 0.0;  // over subjects with a defined ASD; NaN if none
  double median_asd = 0.0;
  std::size_t n_asd = 0;
  std::optional<double> p_vs_hemis;
  bool flag = false;
};

struct SubsetGrid {
  std::vector<Pattern> patterns;
  std::vector<Variant> variants;
  std::vector<std::string> subjects;
  std::vector<std::vector<Cell>> cells;  // [pattern][variant]

  bool has_significance() const;
  const Cell& cell(std::size_t pattern, Variant v) const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Fills every aggregate, p-value and flag of `grid` from its per-subject lists.
void aggregate(SubsetGrid& grid);

struct VariantModel {
  Variant variant;
  Model* model;
};

/// Zeroes the absent scans for each pattern, predicts with every model and
/// scores against the ground truth. Subjects are processed in id order, so the
/// grid does not depend on the order of `subjects`. hemis models receive the
/// true modality labels; the others never see them.
SubsetGrid evaluate_subsets(std::span<const VariantModel> models, const std::vector<synth::Subject>& subjects);

/// Scans of `subject` with those of absent modalities replaced by zeros.
std::vector<Tensor> apply_pattern(const synth::Subject& subject, const Pattern& pattern);

}  // namespace pimms::eval
