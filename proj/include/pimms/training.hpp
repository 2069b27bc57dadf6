#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pimms/adam.hpp"
#include "pimms/config.hpp"
#include "pimms/model.hpp"
#include "pimms/synth.hpp"

namespace pimms::train {

/// How many of the available scans get zeroed: P(k=0)=p0, P(k=1)=p1, the
/// remaining mass spread evenly over 2 <= k <= A-1. Never drops every scan.
struct CurriculumConfig {
  double p0 = 0.4;
  double p1 = 0.4;

  void validate() const;
  /// Distribution over k = 0..available-1; mass meant for unreachable counts
  /// is redistributed proportionally over the reachable ones.
  std::vector<double> count_probabilities(std::size_t available) const;
};

/// Returns the drop mask (true = zero this scan). Only available scans drop.
std::vector<bool> curriculum_dropout(const std::vector<bool>& available, const CurriculumConfig& config, Rng& rng);

/// exp(-gamma * i).
double lambda_schedule(std::uint64_t iteration, double gamma);

struct TrainConfig {
  Variant variant = Variant::soft;
  ad::AdamConfig adam{3e-4, 0.9, 0.999, 1e-8, 1e-4};
  double gamma = 1e-4;
  std::size_t batch = 8;
  /// 0 means batch / 2 (at least 1).
  std::size_t online_batch = 0;
  std::size_t max_iters = 2000;
  /// Square training patch; must equal the dataset's image size.
  std::size_t patch = 32;
  std::uint64_t seed = 1;
  std::size_t val_every = 100;
  /// 32 rounds weights to float32 after every step, 64 keeps doubles.
  int precision = 32;
  CurriculumConfig curriculum;
  seg::SegmentationConfig seg;
  /// Architecture of the jointly trained classifier (online only).
  modality::ClassifierConfig fmod;

  void validate() const;
  std::size_t effective_batch() const;
  /// Reads every documented key, rejects unknown ones.
  static TrainConfig from_config(KeyValueConfig& kv);
  io::Metadata to_metadata() const;
};

struct TraceRow {
  std::uint64_t iteration = 0;
  double l_seg = 0.0;
  double l_class = 0.0;
  double lambda = 0.0;
  /// NaN except on validation iterations.
  double val_dice = 0.0;
};

std::string trace_csv(const std::vector<TraceRow>& trace);

struct TrainState {
  std::uint64_t iteration = 0;
  Model model;
  ad::Adam optimizer{ad::AdamConfig{}};
  Rng data_rng;
  Rng dropout_rng;
  std::vector<TraceRow> trace;
  double best_val_dice = -1.0;
  std::uint64_t best_iteration = 0;
};

/// Bitwise snapshot: params, moments and traces as f64, RNG streams as text.
std::string encode_state(const TrainState& state);
TrainState decode_state(const std::string& data);
void save_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);

/// Per-sample training input.
struct Example {
  const synth::Subject* subject = nullptr;
  /// Classifier scores of the undropped scans (soft/hard only).
  const ModalityScores* scores = nullptr;
};

struct StepLosses {
  double l_seg = 0.0;
  double l_class = 0.0;
  double lambda = 0.0;
  double l_tot = 0.0;
};

/// One optimisation step: curriculum dropout, routing per variant, mean Dice
/// loss over the batch (plus lambda * L_class for online), Adam update.
/// lr = 0 computes the losses and leaves the weights untouched.
StepLosses train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& config);

/// Fresh state with weights from the init stream. soft/hard copy the frozen
/// classifier from `classifier` (required); online initialises its own.
TrainState init_state(const TrainConfig& config, const ClassifierCheckpoint* classifier = nullptr);

struct TrainOptions {
  /// Writes model.ckpt, best.ckpt, trace.csv and state.bin when set.
  std::optional<std::filesystem::path> out_dir;
  /// Stop after this many iterations in this call (resume testing); 0 = none.
  std::size_t stop_after = 0;
  std::function<void(const std::string&)> log;
};

/// Mean Dice over `subjects` with every modality present.
double validation_dice(Model& model, const std::vector<synth::Subject>& subjects);

/// Runs train_step up to config.max_iters, validating every val_every
/// iterations and keeping the best weights. Throws on a non-finite loss.
TrainState train(const TrainConfig& config, const synth::Dataset& data, TrainState state,
                 const TrainOptions& options = {});

struct FmodConfig {
  modality::ClassifierConfig net;
  ad::AdamConfig adam{2e-3, 0.9, 0.999, 1e-8, 1e-4};
  std::size_t iters = 1500;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  int precision = 32;

  void validate() const;
  static FmodConfig from_config(KeyValueConfig& kv);
  io::Metadata to_metadata() const;
};

struct FmodResult {
  /// Input extents are taken from the data.
  modality::ClassifierConfig net;
  ad::ParamSet params;
  /// Split name -> accuracy over every labelled scan in it.
  std::map<std::string, double> accuracy;
  std::vector<double> loss_trace;
};

/// Accuracy of argmax scores against the labels over all scans of `subjects`.
double classifier_accuracy(const modality::ClassifierConfig& net, ad::ParamSet& params,
                           const std::vector<synth::Subject>& subjects);

/// Trains the modality classifier alone on (scan, label) pairs of the train split.
FmodResult train_fmod(const FmodConfig& config, const synth::Dataset& data,
                      const std::function<void(const std::string&)>& log = {});

}  // namespace pimms::train
