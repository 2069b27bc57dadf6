#include "pimms/classifier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pimms/ops.hpp"

namespace pimms::modality {

using ad::Padding;
using ad::Var;

namespace {

std::string block_name(std::size_t s, std::size_t b) {
  return std::string(kParamPrefix) + "s" + std::to_string(s) + "b" + std::to_string(b);
}

Var conv(ad::Tape& tape, Var x, ad::ParamSet& params, const std::string& name, std::size_t stride = 1) {
  return ad::conv2d(x, tape.param(params.get(name + "/kernel")), tape.param(params.get(name + "/bias")),
                    Padding::zero_same, stride);
}

}  // namespace

void ClassifierConfig::validate() const {
  if (stages == 0 || blocks_per_stage == 0 || convs_per_block == 0 || base_filters == 0)
    throw std::invalid_argument("classifier: stages, blocks, convs and filters must be positive");
  if (height == 0 || width == 0) throw std::invalid_argument("classifier: input patch extents must be positive");
  if (modalities < 1) throw std::invalid_argument("classifier: need at least one modality");
  if (depth() < 2) throw std::invalid_argument("classifier: total depth must be at least 2");
}

std::size_t ClassifierConfig::depth() const { return 2 + stages * blocks_per_stage * convs_per_block; }

void init_classifier(ad::ParamSet& params, const ClassifierConfig& config, Rng& rng) {
  config.validate();
  const std::string p(kParamPrefix);
  ad::add_conv(params, p + "stem", 3, 1, config.base_filters, rng);
  std::size_t in = config.base_filters;
  for (std::size_t s = 0; s < config.stages; ++s) {
    const std::size_t filters = config.base_filters << s;
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::string name = block_name(s, b);
      for (std::size_t c = 0; c < config.convs_per_block; ++c)
        ad::add_conv(params, name + "c" + std::to_string(c), 3, c == 0 ? in : filters, filters, rng);
      if (in != filters || (s > 0 && b == 0)) ad::add_conv(params, name + "skip", 1, in, filters, rng);
      in = filters;
    }
  }
  ad::add_dense(params, p + "head", in, config.modalities, rng);
}

Tensor normalize_scan(const Tensor& scan) {
  const double n = static_cast<double>(scan.size());
  double mean = 0.0;
  for (double v : scan.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : scan.data()) var += (v - mean) * (v - mean);
  var /= n;
  Tensor out(scan.shape());
  if (var <= 1e-24) return out;
  const double inv = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < scan.size(); ++i) out[i] = (scan[i] - mean) * inv;
  return out;
}

Var classify(ad::Tape& tape, Var scan, const ClassifierConfig& config, ad::ParamSet& params) {
  const Shape expected{config.height, config.width};
  if (scan.shape() != expected)
    throw std::invalid_argument("classify: scan is " + shape_string(scan.shape()) + ", classifier expects " +
                                shape_string(expected));
  const std::string p(kParamPrefix);
  Var x = ad::relu(conv(tape, ad::reshape(scan, Shape{config.height, config.width, 1}), params, p + "stem"));
  std::size_t in = config.base_filters;
  for (std::size_t s = 0; s < config.stages; ++s) {
    const std::size_t filters = config.base_filters << s;
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::string name = block_name(s, b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      Var h = x;
      for (std::size_t c = 0; c < config.convs_per_block; ++c) {
        h = conv(tape, h, params, name + "c" + std::to_string(c), c == 0 ? stride : 1);
        if (c + 1 < config.convs_per_block) h = ad::relu(h);
      }
      Var skip = (in != filters || stride != 1) ? conv(tape, x, params, name + "skip", stride) : x;
      x = ad::relu(ad::add(h, skip));
      in = filters;
    }
  }
  Var pooled = ad::global_avg_pool(x);
  Var logits = ad::dense(pooled, tape.param(params.get(p + "head/weights")), tape.param(params.get(p + "head/bias")));
  return ad::softmax(logits);
}

Tensor classify(const Tensor& scan, const ClassifierConfig& config, ad::ParamSet& params) {
  ad::Tape tape;
  return classify(tape, tape.constant(scan), config, params).value();
}

Var classify_set(ad::Tape& tape, std::span<const Var> scans, const ClassifierConfig& config, ad::ParamSet& params) {
  if (scans.empty()) throw std::invalid_argument("classify_set: empty scan set");
  std::vector<Var> columns;
  columns.reserve(scans.size());
  for (const auto& s : scans)
    columns.push_back(ad::reshape(classify(tape, s, config, params), Shape{config.modalities, 1}));
  return ad::concat_last(columns);
}

ModalityScores classify_set(const ScanSet& scans, const ClassifierConfig& config, ad::ParamSet& params) {
  if (scans.size() == 0) throw std::invalid_argument("classify_set: empty scan set");
  ad::Tape tape;
  std::vector<Var> vars;
  for (const auto& s : scans.scans()) vars.push_back(tape.constant(s));
  return ModalityScores(classify_set(tape, vars, config, params).value());
}

Var class_loss(Var scores, std::span<const ModalityLabel> labels) {
  const Shape& s = scores.shape();
  if (s.size() != 2) throw std::invalid_argument("class_loss: scores must be [M, N]");
  const std::size_t M = s[0], N = s[1];
  if (labels.size() != N)
    throw std::invalid_argument("class_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) +
                                " score columns");
  Tensor targets(Shape{M, N});
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n].modalities() != M) throw std::invalid_argument("class_loss: label arity does not match scores");
    targets[labels[n].index() * N + n] = 1.0;
  }
  ad::Tape& tape = scores.tape();
  Var picked = ad::mul(ad::log_clamped(scores, kLogFloor), tape.constant(std::move(targets)));
  return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(N));
}

double class_loss(const ModalityScores& scores, std::span<const ModalityLabel> labels) {
  ad::Tape tape;
  return class_loss(tape.constant(scores.matrix()), labels).value().item();
}

}  // namespace pimms::modality
