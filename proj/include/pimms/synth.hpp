#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pimms/config.hpp"
#include "pimms/domain.hpp"
#include "pimms/io.hpp"
#include "pimms/rng.hpp"

namespace pimms::synth {

/// Latent signal pair (q1 ~ longitudinal, q2 ~ transverse relaxation).
struct TissueSignal {
  double q1 = 0.0;
  double q2 = 0.0;
};

struct PhantomConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  double p_no_lesion = 0.1;
  std::size_t max_lesions = 6;
  /// Bounds on total lesion area / image area for phantoms with lesions.
  double lesion_fraction_min = 0.001;
  double lesion_fraction_max = 0.05;
  TissueSignal tissue_a{0.85, 0.35};
  TissueSignal tissue_b{0.65, 0.55};
  TissueSignal lesion{0.50, 0.95};
  double field_amplitude = 0.03;

  void validate() const;
};

enum class Region : std::uint8_t { background = 0, tissue_a = 1, tissue_b = 2, lesion = 3 };

struct LatentPhantom {
  Tensor q1;
  Tensor q2;
  Tensor lesion_mask;
  std::vector<Region> regions;
  std::size_t lesion_count = 0;

  double lesion_fraction() const;
};

LatentPhantom sample_phantom(Rng& rng, const PhantomConfig& config);

struct ModalityParams {
  double alpha = 1.0;
  double beta = 0.0;
  double scale = 1.0;
  double offset = 0.0;
  double sigma = 0.0;
};

struct Protocol {
  std::string id;
  std::array<ModalityParams, kNumModalities> modalities;
};

/// scale * (alpha q1 + beta q2) + offset + N(0, sigma^2) per pixel.
Tensor render_modality(const LatentPhantom& phantom, const ModalityParams& params, Rng& rng);
Tensor render_modality(const LatentPhantom& phantom, const Protocol& protocol, std::size_t modality, Rng& rng);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct ModalityRange {
  Range alpha, beta, scale, offset, sigma;
};

/// Box of acquisition parameters per modality from which protocols are drawn.
struct ProtocolFamily {
  std::string name;
  std::array<ModalityRange, kNumModalities> ranges;
};

/// Protocols seen in training ("mixed").
ProtocolFamily training_family();
/// Protocols whose (alpha, beta) fall outside every training box.
ProtocolFamily holdout_family();
Protocol draw_protocol(const ProtocolFamily& family, std::string id, Rng& rng);
/// True when no modality's (alpha, beta) lies inside any modality box of `training`.
bool outside_family(const Protocol& protocol, const ProtocolFamily& training);

struct DatasetConfig {
  std::size_t samples = 500;
  std::size_t holdout_samples = 100;
  std::size_t train_protocols = 12;
  std::size_t holdout_protocols = 4;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  PhantomConfig phantom;

  void validate() const;
  /// Reads the documented keys and rejects unknown ones.
  static DatasetConfig from_config(KeyValueConfig& kv);
  io::Metadata to_metadata() const;
};

/// One subject: scans in arbitrary (shuffled) order with their modality labels.
struct Subject {
  std::string id;
  std::string split;
  std::string protocol;
  std::uint64_t seed = 0;
  std::vector<Tensor> scans;
  std::vector<ModalityLabel> labels;
  Tensor mask;
};

struct Dataset {
  std::vector<Subject> train, val, test, holdout;

  const std::vector<Subject>& split(const std::string& name) const;
  std::size_t total() const { return train.size() + val.size() + test.size() + holdout.size(); }
};

inline const std::array<std::string, 4> kSplits = {"train", "val", "test", "holdout"};

/// Renders a subject; values are rounded to float32 so in-memory datasets
/// match what load_dataset() returns.
Subject make_subject(std::uint64_t seed, const Protocol& protocol, const PhantomConfig& config);

Dataset build_dataset(const DatasetConfig& config);
/// Layout: <root>/<split>/<id>/{scan_k.rawt, mask.rawt, meta.txt}, plus <root>/dataset.txt.
void write_dataset(const Dataset& dataset, const DatasetConfig& config, const std::filesystem::path& root);
Dataset generate_dataset(const DatasetConfig& config, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace pimms::synth
