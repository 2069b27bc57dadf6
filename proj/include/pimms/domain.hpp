#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pimms/tensor.hpp"

namespace pimms {

/// Canonical slot order used everywhere: T1, T2, FLAIR.
inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<std::string_view, kNumModalities> kModalityNames = {"T1", "T2", "FLAIR"};

std::string modality_name(std::size_t m);
/// Accepts "T1", "T2", "FLAIR" (case-insensitive, "F" for FLAIR) or "m<k>".
std::size_t parse_modality(std::string_view name);

/// One-hot modality target y_m.
class ModalityLabel {
 public:
  ModalityLabel(std::size_t index, std::size_t modalities = kNumModalities);

  std::size_t index() const { return index_; }
  std::size_t modalities() const { return modalities_; }
  std::vector<double> one_hot() const;

  friend bool operator==(const ModalityLabel&, const ModalityLabel&) = default;

 private:
  std::size_t index_;
  std::size_t modalities_;
};

/// Unordered set of N co-registered single-channel [H, W] scans. Carries no
/// modality information.
class ScanSet {
 public:
  ScanSet() = default;
  explicit ScanSet(std::vector<Tensor> scans);

  std::size_t size() const { return scans_.size(); }
  std::size_t height() const { return scans_.front().dim(0); }
  std::size_t width() const { return scans_.front().dim(1); }
  const Tensor& operator[](std::size_t n) const { return scans_[n]; }
  const std::vector<Tensor>& scans() const { return scans_; }
  ScanSet permuted(const std::vector<std::size_t>& order) const;

 private:
  std::vector<Tensor> scans_;
};

/// Column-stochastic [M, N] matrix; column n scores scan n.
class ModalityScores {
 public:
  ModalityScores() = default;
  explicit ModalityScores(Tensor matrix);

  std::size_t modalities() const { return matrix_.dim(0); }
  std::size_t scans() const { return matrix_.dim(1); }
  double operator()(std::size_t m, std::size_t n) const { return matrix_[m * scans() + n]; }
  const Tensor& matrix() const { return matrix_; }
  /// Index of the largest entry of column n; ties resolve to the lowest index.
  std::size_t argmax(std::size_t n) const;
  ModalityScores permuted_columns(const std::vector<std::size_t>& order) const;

 private:
  Tensor matrix_;
};

}  // namespace pimms
