#include "pimms/model.hpp"

#include <stdexcept>

#include "pimms/ops.hpp"
#include "pimms/routing.hpp"

namespace pimms {

using ad::Var;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::hemis: return "hemis";
    case Variant::soft: return "soft";
    case Variant::hard: return "hard";
    case Variant::online: return "online";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : kVariants)
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected hemis, soft, hard or online)");
}

namespace {

std::size_t meta_size(const io::Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint metadata lacks '" + key + "'");
  try {
    return static_cast<std::size_t>(std::stoull(it->second));
  } catch (const std::exception&) {
    throw std::runtime_error("checkpoint metadata '" + key + "' is not an integer: " + it->second);
  }
}

const std::string& meta_string(const io::Metadata& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

io::Metadata seg_metadata(const seg::SegmentationConfig& c) {
  return {{"seg.modalities", std::to_string(c.modalities)},
          {"seg.backend_layers", std::to_string(c.backend.layers)},
          {"seg.backend_filters", std::to_string(c.backend.filters)},
          {"seg.backend_kernel", std::to_string(c.backend.kernel)},
          {"seg.frontend_hidden_filters", std::to_string(c.frontend.hidden_filters)},
          {"seg.frontend_hidden_kernel", std::to_string(c.frontend.hidden_kernel)},
          {"seg.frontend_output_kernel", std::to_string(c.frontend.output_kernel)},
          {"seg.stats_mode", seg::to_string(c.stats_mode)}};
}

seg::SegmentationConfig seg_from_metadata(const io::Metadata& m) {
  seg::SegmentationConfig c;
  c.modalities = meta_size(m, "seg.modalities");
  c.backend.layers = meta_size(m, "seg.backend_layers");
  c.backend.filters = meta_size(m, "seg.backend_filters");
  c.backend.kernel = meta_size(m, "seg.backend_kernel");
  c.frontend.hidden_filters = meta_size(m, "seg.frontend_hidden_filters");
  c.frontend.hidden_kernel = meta_size(m, "seg.frontend_hidden_kernel");
  c.frontend.output_kernel = meta_size(m, "seg.frontend_output_kernel");
  c.stats_mode = seg::parse_stats_mode(meta_string(m, "seg.stats_mode"));
  c.validate();
  return c;
}

bool has_prefix(const std::string& s, std::string_view prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

ModalityScores scores_of_normalized(Model& model, std::span<const Tensor> normalized) {
  ad::Tape tape;
  std::vector<Var> vars;
  for (const auto& s : normalized) vars.push_back(tape.constant(s));
  return ModalityScores(modality::classify_set(tape, vars, model.fmod, model.params).value());
}

}  // namespace

io::Metadata classifier_metadata(const modality::ClassifierConfig& c) {
  return {{"fmod.stages", std::to_string(c.stages)},
          {"fmod.blocks_per_stage", std::to_string(c.blocks_per_stage)},
          {"fmod.convs_per_block", std::to_string(c.convs_per_block)},
          {"fmod.base_filters", std::to_string(c.base_filters)},
          {"fmod.height", std::to_string(c.height)},
          {"fmod.width", std::to_string(c.width)},
          {"fmod.modalities", std::to_string(c.modalities)}};
}

modality::ClassifierConfig classifier_from_metadata(const io::Metadata& m) {
  modality::ClassifierConfig c;
  c.stages = meta_size(m, "fmod.stages");
  c.blocks_per_stage = meta_size(m, "fmod.blocks_per_stage");
  c.convs_per_block = meta_size(m, "fmod.convs_per_block");
  c.base_filters = meta_size(m, "fmod.base_filters");
  c.height = meta_size(m, "fmod.height");
  c.width = meta_size(m, "fmod.width");
  c.modalities = meta_size(m, "fmod.modalities");
  c.validate();
  return c;
}

io::Metadata Model::metadata() const {
  io::Metadata meta = seg_metadata(seg);
  meta["kind"] = "model";
  meta["variant"] = to_string(variant);
  if (uses_classifier()) meta.merge(classifier_metadata(fmod));
  return meta;
}

Model make_model(Variant variant, const seg::SegmentationConfig& seg, const modality::ClassifierConfig& fmod, Rng& rng,
                 const ad::ParamSet* classifier) {
  Model model;
  model.variant = variant;
  model.seg = seg;
  model.fmod = fmod;
  seg::init_segmentation(model.params, seg, rng);
  if (model.uses_classifier()) {
    if (!classifier) throw std::invalid_argument(to_string(variant) + " requires pretrained f_mod");
    for (const auto& e : *classifier)
      if (has_prefix(e.name, modality::kParamPrefix)) model.params.add(e.name, e.tensor);
    if (variant != Variant::online) model.params.set_trainable(modality::kParamPrefix, false);
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model, io::Metadata extra) {
  io::Metadata meta = model.metadata();
  meta.merge(extra);
  io::save_checkpoint(path, model.params, meta);
}

Model model_from_metadata(const io::Metadata& meta) {
  auto kind = meta.find("kind");
  if (kind == meta.end() || kind->second != "model") throw std::runtime_error("not a segmentation model");
  Model model;
  model.variant = parse_variant(meta_string(meta, "variant"));
  model.seg = seg_from_metadata(meta);
  if (model.uses_classifier()) model.fmod = classifier_from_metadata(meta);
  return model;
}

Model load_model(const std::filesystem::path& path) {
  io::Checkpoint ck = io::load_checkpoint(path);
  Model model;
  try {
    model = model_from_metadata(ck.meta);
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable checkpoint " + path.string() + ": " + e.what());
  }
  model.params = std::move(ck.params);
  if (model.variant != Variant::online) model.params.set_trainable(modality::kParamPrefix, false);
  return model;
}

ClassifierCheckpoint load_classifier(const std::filesystem::path& path) {
  io::Checkpoint ck = io::load_checkpoint(path);
  auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "classifier")
    throw std::runtime_error("unreadable checkpoint " + path.string() + ": not a modality classifier");
  ClassifierCheckpoint out;
  try {
    out.config = classifier_from_metadata(ck.meta);
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable checkpoint " + path.string() + ": " + e.what());
  }
  out.params = std::move(ck.params);
  out.metadata = std::move(ck.meta);
  return out;
}

void save_classifier(const std::filesystem::path& path, const modality::ClassifierConfig& config,
                     const ad::ParamSet& params, io::Metadata extra) {
  io::Metadata meta = classifier_metadata(config);
  meta["kind"] = "classifier";
  meta.merge(extra);
  io::save_checkpoint(path, params, meta);
}

std::vector<Tensor> normalize_scans(std::span<const Tensor> scans) {
  std::vector<Tensor> out;
  out.reserve(scans.size());
  for (const auto& s : scans) out.push_back(modality::normalize_scan(s));
  return out;
}

ModalityScores frozen_scores(Model& model, std::span<const Tensor> scans) {
  if (!model.uses_classifier()) throw std::logic_error("hemis models carry no classifier");
  const auto norm = normalize_scans(scans);
  return scores_of_normalized(model, norm);
}

ForwardResult forward(ad::Tape& tape, Model& model, std::span<const Tensor> scans, std::span<const ModalityLabel> labels,
                      const ModalityScores* frozen) {
  if (scans.empty()) throw std::invalid_argument("forward: no scans");
  ScanSet checked{std::vector<Tensor>(scans.begin(), scans.end())};  // shape validation
  const auto norm = normalize_scans(scans);
  std::vector<Var> vars;
  for (const auto& s : norm) vars.push_back(tape.constant(s));

  ForwardResult result;
  routing::RoutedVars routed;
  switch (model.variant) {
    case Variant::hemis:
      if (labels.size() != scans.size())
        throw std::invalid_argument("hemis needs one modality label per scan (" + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(scans.size()) + " scans)");
      routed = routing::route_labels(tape, vars, labels);
      break;
    case Variant::soft:
    case Variant::hard: {
      const ModalityScores s = frozen ? *frozen : scores_of_normalized(model, norm);
      if (s.scans() != scans.size() || s.modalities() != model.seg.modalities)
        throw std::invalid_argument("forward: score matrix does not match the scan set");
      result.scores = tape.constant(s.matrix());
      routed = model.variant == Variant::soft ? routing::route_soft(tape, vars, *result.scores)
                                              : routing::route_hard(tape, vars, s);
      break;
    }
    case Variant::online:
      for (const auto& v : vars)
        result.columns.push_back(
            ad::reshape(modality::classify(tape, v, model.fmod, model.params), Shape{model.fmod.modalities, 1}));
      result.scores = ad::concat_last(result.columns);
      routed = routing::route_soft(tape, vars, *result.scores);
      break;
  }
  result.prediction = seg::segment(tape, routed, model.seg, model.params);
  return result;
}

Tensor predict(Model& model, std::span<const Tensor> scans, std::span<const ModalityLabel> labels) {
  ad::Tape tape;
  return forward(tape, model, scans, labels).prediction.value();
}

}  // namespace pimms
