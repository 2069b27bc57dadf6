#include "pimms/domain.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace pimms {

std::string modality_name(std::size_t m) {
  if (m < kNumModalities) return std::string(kModalityNames[m]);
  return "m" + std::to_string(m);
}

std::size_t parse_modality(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "F") return 2;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    if (up == kModalityNames[m]) return m;
  if (up.size() > 1 && up[0] == 'M' && std::all_of(up.begin() + 1, up.end(), ::isdigit)) return std::stoul(up.substr(1));
  throw std::invalid_argument("unknown modality label: " + std::string(name));
}

ModalityLabel::ModalityLabel(std::size_t index, std::size_t modalities) : index_(index), modalities_(modalities) {
  if (index >= modalities) throw std::invalid_argument("modality label index out of range");
}

std::vector<double> ModalityLabel::one_hot() const {
  std::vector<double> v(modalities_, 0.0);
  v[index_] = 1.0;
  return v;
}

ScanSet::ScanSet(std::vector<Tensor> scans) : scans_(std::move(scans)) {
  if (scans_.empty()) throw std::invalid_argument("scan set must contain at least one scan");
  for (const auto& s : scans_) {
    if (s.rank() != 2) throw std::invalid_argument("scans must be [H, W], got " + shape_string(s.shape()));
    if (s.shape() != scans_.front().shape())
      throw std::invalid_argument("scan shapes differ: " + shape_string(s.shape()) + " vs " +
                                  shape_string(scans_.front().shape()));
  }
}

ScanSet ScanSet::permuted(const std::vector<std::size_t>& order) const {
  std::vector<Tensor> out;
  for (auto i : order) out.push_back(scans_.at(i));
  return ScanSet(std::move(out));
}

ModalityScores::ModalityScores(Tensor matrix) : matrix_(std::move(matrix)) {
  if (matrix_.rank() != 2) throw std::invalid_argument("modality scores must be [M, N]");
}

std::size_t ModalityScores::argmax(std::size_t n) const {
  std::size_t best = 0;
  for (std::size_t m = 1; m < modalities(); ++m)
    if ((*this)(m, n) > (*this)(best, n)) best = m;
  return best;
}

ModalityScores ModalityScores::permuted_columns(const std::vector<std::size_t>& order) const {
  const std::size_t M = modalities(), N = order.size();
  Tensor out(Shape{M, N});
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t j = 0; j < N; ++j) out[m * N + j] = (*this)(m, order.at(j));
  return ModalityScores(std::move(out));
}

}  // namespace pimms
