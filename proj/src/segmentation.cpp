#include "pimms/segmentation.hpp"

#include <stdexcept>

#include "pimms/ops.hpp"

namespace pimms::seg {

using ad::Padding;
using ad::Var;

std::string to_string(StatsMode mode) { return mode == StatsMode::imputation ? "imputation" : "exclusion"; }

StatsMode parse_stats_mode(std::string_view s) {
  if (s == "imputation") return StatsMode::imputation;
  if (s == "exclusion") return StatsMode::exclusion;
  throw std::invalid_argument("unknown stats mode: " + std::string(s));
}

void SegmentationConfig::validate() const {
  if (modalities == 0) throw std::invalid_argument("segmentation: need at least one modality slot");
  if (backend.layers == 0 || backend.filters == 0 || backend.kernel == 0)
    throw std::invalid_argument("segmentation: backend layers, filters and kernel must be positive");
  if (frontend.hidden_filters == 0 || frontend.hidden_kernel == 0 || frontend.output_kernel == 0)
    throw std::invalid_argument("segmentation: frontend filters and kernels must be positive");
}

std::string backend_prefix(std::size_t m) {
  static const char* names[] = {"phi_t1/", "phi_t2/", "phi_f/"};
  if (m < 3) return names[m];
  return "phi_m" + std::to_string(m) + "/";
}

void init_segmentation(ad::ParamSet& params, const SegmentationConfig& config, Rng& rng) {
  config.validate();
  const auto& b = config.backend;
  for (std::size_t m = 0; m < config.modalities; ++m) {
    for (std::size_t l = 0; l < b.layers; ++l)
      ad::add_conv(params, backend_prefix(m) + "conv" + std::to_string(l), b.kernel, l == 0 ? 1 : b.filters, b.filters,
                   rng);
  }
  const auto& f = config.frontend;
  const std::string p(kFrontendPrefix);
  ad::add_conv(params, p + "conv0", f.hidden_kernel, 2 * b.filters, f.hidden_filters, rng);
  ad::add_conv(params, p + "conv1", f.output_kernel, f.hidden_filters, kClasses, rng);
}

namespace {

Var conv(ad::Tape& tape, Var x, ad::ParamSet& params, const std::string& name) {
  return ad::conv2d(x, tape.param(params.get(name + "/kernel")), tape.param(params.get(name + "/bias")),
                    Padding::zero_same);
}

}  // namespace

std::vector<Var> backend_forward(ad::Tape& tape, std::span<const Var> slots, const SegmentationConfig& config,
                                 ad::ParamSet& params) {
  if (slots.size() != config.modalities)
    throw std::invalid_argument("backend_forward: " + std::to_string(slots.size()) + " slots for " +
                                std::to_string(config.modalities) + " backends");
  std::vector<Var> out;
  for (std::size_t m = 0; m < slots.size(); ++m) {
    const Shape& s = slots[m].shape();
    if (s.size() != 2) throw std::invalid_argument("backend_forward: slots must be [H, W]");
    Var x = ad::reshape(slots[m], Shape{s[0], s[1], 1});
    for (std::size_t l = 0; l < config.backend.layers; ++l)
      x = ad::relu(conv(tape, x, params, backend_prefix(m) + "conv" + std::to_string(l)));
    out.push_back(ad::maxpool2d(x, 2, 1, Padding::zero_same));
  }
  return out;
}

Var abstraction(std::span<const Var> embeddings, const std::vector<bool>& available, StatsMode mode) {
  if (embeddings.empty()) throw std::invalid_argument("abstraction: no embeddings");
  if (available.size() != embeddings.size())
    throw std::invalid_argument("abstraction: availability flags do not match embeddings");
  std::vector<Var> used;
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    if (embeddings[m].shape() != embeddings[0].shape())
      throw std::invalid_argument("abstraction: embedding shapes differ");
    if (mode == StatsMode::imputation || available[m]) used.push_back(embeddings[m]);
  }
  if (used.empty()) throw std::invalid_argument("abstraction: no available modality in exclusion mode");
  const double inv = 1.0 / static_cast<double>(used.size());
  Var mean = ad::scale(ad::add_n(used), inv);
  std::vector<Var> dev;
  for (const auto& e : used) dev.push_back(ad::square(ad::sub(e, mean)));
  Var var = ad::scale(ad::add_n(dev), inv);
  const Var parts[] = {mean, var};
  return ad::concat_last(parts);
}

Var frontend_forward(Var fused, const SegmentationConfig& config, ad::ParamSet& params) {
  const Shape& s = fused.shape();
  if (s.size() != 3 || s[2] != 2 * config.backend.filters)
    throw std::invalid_argument("frontend_forward: expected [H, W, " + std::to_string(2 * config.backend.filters) +
                                "], got " + shape_string(s));
  ad::Tape& tape = fused.tape();
  const std::string p(kFrontendPrefix);
  Var h = ad::relu(conv(tape, fused, params, p + "conv0"));
  return ad::softmax(conv(tape, h, params, p + "conv1"), 2);
}

Var dice_loss(Var prediction, const Tensor& target) {
  const Shape& s = prediction.shape();
  if (s.size() != 3 || s[2] != kClasses || target.shape() != Shape{s[0], s[1]})
    throw std::invalid_argument("dice_loss: prediction " + shape_string(s) + " incompatible with target " +
                                shape_string(target.shape()));
  double g2 = 0.0;
  for (double v : target.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("dice_loss: target must be binary");
    g2 += v * v;
  }
  ad::Tape& tape = prediction.tape();
  Var p = ad::take_channel(prediction, kLesionChannel);
  Var num = ad::add_scalar(ad::scale(ad::sum(ad::mul(p, tape.constant(target))), 2.0), kDiceEps);
  Var den = ad::add_scalar(ad::sum(ad::square(p)), g2 + kDiceEps);
  return ad::add_scalar(ad::scale(ad::div(num, den), -1.0), 1.0);
}

Var segment(ad::Tape& tape, const routing::RoutedVars& routed, const SegmentationConfig& config, ad::ParamSet& params) {
  auto embeddings = backend_forward(tape, routed.slots, config, params);
  Var fused = abstraction(embeddings, routed.available, config.stats_mode);
  return frontend_forward(fused, config, params);
}

}  // namespace pimms::seg
