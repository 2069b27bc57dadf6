#include "pimms/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pimms/evaluation.hpp"
#include "pimms/ops.hpp"
#include "pimms/parallel.hpp"

namespace pimms::train {

using ad::Var;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::string_view kStateMagic = "PIMMSSTATE1";

std::string g17(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void round_trainable(ad::ParamSet& params) {
  for (auto& e : params)
    if (e.tensor.requires_grad()) io::round_to_f32(e.tensor.data());
}

bool same_adam(const ad::AdamConfig& a, const ad::AdamConfig& b) {
  return a.lr == b.lr && a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps && a.weight_decay == b.weight_decay;
}

void check_precision(int precision) {
  if (precision != 32 && precision != 64) throw std::invalid_argument("precision must be 32 or 64");
}

void check_extent(const synth::Subject& s, std::size_t patch) {
  for (const auto& scan : s.scans)
    if (scan.rank() != 2 || scan.dim(0) != patch || scan.dim(1) != patch)
      throw std::invalid_argument("subject " + s.id + " has scans of shape " + shape_string(scan.shape()) +
                                  ", training patch is " + std::to_string(patch) + "x" + std::to_string(patch));
}

}  // namespace

void CurriculumConfig::validate() const {
  if (!(p0 >= 0.0 && p1 >= 0.0 && p0 + p1 <= 1.0 + 1e-12))
    throw std::invalid_argument("curriculum probabilities must be non-negative with p_drop0 + p_drop1 <= 1");
}

std::vector<double> CurriculumConfig::count_probabilities(std::size_t available) const {
  validate();
  if (available == 0) throw std::invalid_argument("curriculum dropout needs at least one available scan");
  std::vector<double> p(available, 0.0);
  p[0] = p0;
  if (available > 1) p[1] = p1;
  if (available > 2) {
    const double rest = std::max(0.0, 1.0 - p0 - p1) / static_cast<double>(available - 2);
    for (std::size_t k = 2; k < available; ++k) p[k] = rest;
  }
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (total <= 0.0) {
    p.assign(available, 0.0);
    p[0] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

std::vector<bool> curriculum_dropout(const std::vector<bool>& available, const CurriculumConfig& config, Rng& rng) {
  std::vector<std::size_t> idx;
  for (std::size_t n = 0; n < available.size(); ++n)
    if (available[n]) idx.push_back(n);
  const auto probs = config.count_probabilities(idx.size());
  const double u = uniform(rng, 0.0, 1.0);
  std::size_t k = 0;
  double acc = probs[0];
  while (k + 1 < probs.size() && u >= acc) acc += probs[++k];
  std::vector<bool> drop(available.size(), false);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + uniform_index(rng, idx.size() - j);
    std::swap(idx[j], idx[pick]);
    drop[idx[j]] = true;
  }
  return drop;
}

double lambda_schedule(std::uint64_t iteration, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("lambda_schedule: gamma must be non-negative");
  return std::exp(-gamma * static_cast<double>(iteration));
}

void TrainConfig::validate() const {
  if (adam.lr < 0.0) throw std::invalid_argument("lr must be non-negative");
  if (adam.lr > 0.0) adam.validate();
  if (gamma < 0.0) throw std::invalid_argument("gamma must be non-negative");
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (patch < 8) throw std::invalid_argument("patch must be at least 8");
  if (val_every == 0) throw std::invalid_argument("val_every must be positive");
  check_precision(precision);
  curriculum.validate();
  seg.validate();
  if (variant == Variant::online) fmod.validate();
}

std::size_t TrainConfig::effective_batch() const {
  if (variant != Variant::online) return batch;
  return online_batch ? online_batch : std::max<std::size_t>(1, batch / 2);
}

TrainConfig TrainConfig::from_config(KeyValueConfig& kv) {
  TrainConfig c;
  c.variant = parse_variant(kv.get_string("variant", to_string(c.variant)));
  c.adam.lr = kv.get_double("lr", c.adam.lr);
  c.adam.weight_decay = kv.get_double("weight_decay", c.adam.weight_decay);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.batch = kv.get_size("batch", c.batch);
  c.online_batch = kv.get_size("online_batch", c.online_batch);
  c.max_iters = kv.get_size("max_iters", c.max_iters);
  c.patch = kv.get_size("patch", c.patch);
  c.seed = kv.get_u64("seed", c.seed);
  c.val_every = kv.get_size("val_every", c.val_every);
  c.precision = static_cast<int>(kv.get_size("precision", static_cast<std::size_t>(c.precision)));
  c.curriculum.p0 = kv.get_double("p_drop0", c.curriculum.p0);
  c.curriculum.p1 = kv.get_double("p_drop1", c.curriculum.p1);
  c.seg.stats_mode = seg::parse_stats_mode(kv.get_string("stats_mode", seg::to_string(c.seg.stats_mode)));
  c.seg.backend.layers = kv.get_size("backend_layers", c.seg.backend.layers);
  c.seg.backend.filters = kv.get_size("backend_filters", c.seg.backend.filters);
  c.seg.backend.kernel = kv.get_size("backend_kernel", c.seg.backend.kernel);
  c.seg.frontend.hidden_filters = kv.get_size("frontend_hidden_filters", c.seg.frontend.hidden_filters);
  c.seg.frontend.hidden_kernel = kv.get_size("frontend_hidden_kernel", c.seg.frontend.hidden_kernel);
  c.seg.frontend.output_kernel = kv.get_size("frontend_output_kernel", c.seg.frontend.output_kernel);
  c.fmod.stages = kv.get_size("fmod_stages", c.fmod.stages);
  c.fmod.blocks_per_stage = kv.get_size("fmod_blocks", c.fmod.blocks_per_stage);
  c.fmod.convs_per_block = kv.get_size("fmod_convs", c.fmod.convs_per_block);
  c.fmod.base_filters = kv.get_size("fmod_filters", c.fmod.base_filters);
  c.fmod.height = c.fmod.width = c.patch;
  kv.reject_unknown();
  c.validate();
  return c;
}

io::Metadata TrainConfig::to_metadata() const {
  return {{"variant", to_string(variant)},
          {"lr", g17(adam.lr)},
          {"weight_decay", g17(adam.weight_decay)},
          {"gamma", g17(gamma)},
          {"batch", std::to_string(batch)},
          {"online_batch", std::to_string(online_batch)},
          {"max_iters", std::to_string(max_iters)},
          {"patch", std::to_string(patch)},
          {"seed", std::to_string(seed)},
          {"val_every", std::to_string(val_every)},
          {"precision", std::to_string(precision)},
          {"p_drop0", g17(curriculum.p0)},
          {"p_drop1", g17(curriculum.p1)},
          {"stats_mode", seg::to_string(seg.stats_mode)},
          {"backend_layers", std::to_string(seg.backend.layers)},
          {"backend_filters", std::to_string(seg.backend.filters)},
          {"backend_kernel", std::to_string(seg.backend.kernel)},
          {"frontend_hidden_filters", std::to_string(seg.frontend.hidden_filters)},
          {"frontend_hidden_kernel", std::to_string(seg.frontend.hidden_kernel)},
          {"frontend_output_kernel", std::to_string(seg.frontend.output_kernel)},
          {"fmod_stages", std::to_string(fmod.stages)},
          {"fmod_blocks", std::to_string(fmod.blocks_per_stage)},
          {"fmod_convs", std::to_string(fmod.convs_per_block)},
          {"fmod_filters", std::to_string(fmod.base_filters)}};
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "iteration,l_seg,l_class,lambda,val_dice\n";
  for (const auto& r : trace)
    out += std::to_string(r.iteration) + "," + g17(r.l_seg) + "," + g17(r.l_class) + "," + g17(r.lambda) + "," +
           g17(r.val_dice) + "\n";
  return out;
}

std::string encode_state(const TrainState& s) {
  io::ByteWriter w;
  w.bytes(kStateMagic);
  w.str(io::format_metadata(s.model.metadata()));
  w.u64(s.iteration);
  w.u64(s.best_iteration);
  w.f64(s.best_val_dice);
  w.u32(static_cast<std::uint32_t>(s.model.params.size()));
  for (const auto& e : s.model.params) {
    w.str(e.name);
    w.u32(e.tensor.requires_grad() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) w.f64(v);
  }
  w.u64(static_cast<std::uint64_t>(s.optimizer.steps()));
  w.u32(static_cast<std::uint32_t>(s.optimizer.moments().size()));
  for (const auto& [name, mom] : s.optimizer.moments()) {
    w.str(name);
    w.u64(mom.m.size());
    for (double v : mom.m) w.f64(v);
    for (double v : mom.v) w.f64(v);
  }
  w.str(rng_state(s.data_rng));
  w.str(rng_state(s.dropout_rng));
  w.u64(s.trace.size());
  for (const auto& r : s.trace) {
    w.u64(r.iteration);
    w.f64(r.l_seg);
    w.f64(r.l_class);
    w.f64(r.lambda);
    w.f64(r.val_dice);
  }
  return w.buffer();
}

TrainState decode_state(const std::string& data) {
  io::ByteReader r(data);
  if (r.bytes(kStateMagic.size()) != kStateMagic) throw std::runtime_error("not a training state file");
  const io::Metadata meta = io::parse_metadata(r.str());
  TrainState s;
  s.iteration = r.u64();
  s.best_iteration = r.u64();
  s.best_val_dice = r.f64();

  s.model = model_from_metadata(meta);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const bool trainable = r.u32() != 0;
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    for (auto& v : t.data()) v = r.f64();
    Tensor& added = s.model.params.add(name, std::move(t));
    added.set_requires_grad(trainable);
  }
  const auto steps = static_cast<std::int64_t>(r.u64());
  std::map<std::string, ad::Adam::Moments> moments;
  const std::uint32_t nm = r.u32();
  for (std::uint32_t i = 0; i < nm; ++i) {
    const std::string name = r.str();
    ad::Adam::Moments m;
    const std::uint64_t n = r.u64();
    m.m.resize(n);
    m.v.resize(n);
    for (auto& v : m.m) v = r.f64();
    for (auto& v : m.v) v = r.f64();
    moments.emplace(name, std::move(m));
  }
  s.optimizer.restore(steps, std::move(moments));
  s.data_rng = rng_from_state(r.str());
  s.dropout_rng = rng_from_state(r.str());
  const std::uint64_t rows = r.u64();
  for (std::uint64_t i = 0; i < rows; ++i) {
    TraceRow row;
    row.iteration = r.u64();
    row.l_seg = r.f64();
    row.l_class = r.f64();
    row.lambda = r.f64();
    row.val_dice = r.f64();
    s.trace.push_back(row);
  }
  if (!r.at_end()) throw std::runtime_error("training state has trailing bytes");
  return s;
}

void save_state(const std::filesystem::path& path, const TrainState& state) {
  io::write_file_atomic(path, encode_state(state));
}

TrainState load_state(const std::filesystem::path& path) {
  try {
    return decode_state(io::read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable training state " + path.string() + ": " + e.what());
  }
}

TrainState init_state(const TrainConfig& config, const ClassifierCheckpoint* classifier) {
  config.validate();
  Rng init = make_stream(config.seed, "init");
  TrainState s;
  switch (config.variant) {
    case Variant::hemis:
      if (classifier) throw std::invalid_argument("hemis does not use a classifier checkpoint");
      s.model = make_model(Variant::hemis, config.seg, config.fmod, init, nullptr);
      break;
    case Variant::soft:
    case Variant::hard:
      if (!classifier) throw std::invalid_argument(to_string(config.variant) + " requires pretrained f_mod");
      if (classifier->config.modalities != config.seg.modalities)
        throw std::invalid_argument("classifier modality count does not match the segmenter");
      s.model = make_model(config.variant, config.seg, classifier->config, init, &classifier->params);
      break;
    case Variant::online: {
      if (classifier) throw std::invalid_argument("online trains its own classifier; no checkpoint accepted");
      ad::ParamSet fmod;
      modality::init_classifier(fmod, config.fmod, init);
      s.model = make_model(Variant::online, config.seg, config.fmod, init, &fmod);
      break;
    }
  }
  if (config.precision == 32) round_trainable(s.model.params);
  if (config.adam.lr > 0.0) s.optimizer = ad::Adam(config.adam);
  s.data_rng = make_stream(config.seed, "data");
  s.dropout_rng = make_stream(config.seed, "dropout");
  return s;
}

StepLosses train_step(TrainState& state, std::span<const Example> batch, const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  Model& model = state.model;
  if (model.variant != config.variant)
    throw std::invalid_argument("train_step: state holds a " + to_string(model.variant) + " model, config says " +
                                to_string(config.variant));
  const bool online = model.variant == Variant::online;
  ad::Tape tape;
  std::vector<Var> seg_terms, class_terms;
  for (const auto& ex : batch) {
    const synth::Subject& s = *ex.subject;
    if ((online || model.variant == Variant::hemis) && s.labels.size() != s.scans.size())
      throw std::invalid_argument(to_string(model.variant) + " training requires modality labels (subject " + s.id +
                                  ")");
    std::vector<bool> available(s.scans.size());
    for (std::size_t n = 0; n < s.scans.size(); ++n) available[n] = !s.scans[n].all_zero();
    const auto drop = curriculum_dropout(available, config.curriculum, state.dropout_rng);
    std::vector<Tensor> scans = s.scans;
    for (std::size_t n = 0; n < scans.size(); ++n)
      if (drop[n]) scans[n] = Tensor(scans[n].shape());

    const ModalityScores* frozen = online ? nullptr : ex.scores;
    ForwardResult r = forward(tape, model, scans, s.labels, frozen);
    seg_terms.push_back(seg::dice_loss(r.prediction, s.mask));
    if (online) {
      std::vector<Var> kept;
      std::vector<ModalityLabel> kept_labels;
      for (std::size_t n = 0; n < scans.size(); ++n)
        if (available[n] && !drop[n]) {
          kept.push_back(r.columns[n]);
          kept_labels.push_back(s.labels[n]);
        }
      class_terms.push_back(modality::class_loss(ad::concat_last(kept), kept_labels));
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  StepLosses out;
  out.lambda = lambda_schedule(state.iteration, config.gamma);
  Var l_seg = ad::scale(ad::add_n(seg_terms), inv_b);
  Var total = l_seg;
  out.l_seg = l_seg.value().item();
  out.l_class = kNaN;
  if (online) {
    Var l_class = ad::scale(ad::add_n(class_terms), inv_b);
    out.l_class = l_class.value().item();
    total = ad::add(l_seg, ad::scale(l_class, out.lambda));
  }
  out.l_tot = total.value().item();

  if (config.adam.lr > 0.0) {
    if (!same_adam(state.optimizer.config(), config.adam)) {
      ad::Adam fresh(config.adam);
      fresh.restore(state.optimizer.steps(), state.optimizer.moments());
      state.optimizer = std::move(fresh);
    }
    model.params.zero_grad();
    tape.backward(total);
    state.optimizer.step(model.params);
    if (config.precision == 32) round_trainable(model.params);
  }
  ++state.iteration;
  return out;
}

double validation_dice(Model& model, const std::vector<synth::Subject>& subjects) {
  if (subjects.empty()) return kNaN;
  std::vector<double> dice(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto& s = subjects[i];
    const auto labels =
        model.variant == Variant::hemis ? std::span<const ModalityLabel>(s.labels) : std::span<const ModalityLabel>();
    dice[i] = eval::dice_score(eval::threshold(predict(model, s.scans, labels)), s.mask);
  });
  return std::accumulate(dice.begin(), dice.end(), 0.0) / static_cast<double>(dice.size());
}

TrainState train(const TrainConfig& config, const synth::Dataset& data, TrainState state, const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("empty dataset: no training subjects");
  for (const auto& s : data.train) check_extent(s, config.patch);
  if (state.model.variant != config.variant)
    throw std::invalid_argument("training state holds a " + to_string(state.model.variant) + " model");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  // Frozen classifier scores never change, so compute them once.
  std::vector<ModalityScores> cache;
  if (config.variant == Variant::soft || config.variant == Variant::hard) {
    cache.resize(data.train.size());
    parallel_for(data.train.size(), [&](std::size_t i) { cache[i] = frozen_scores(state.model, data.train[i].scans); });
  }

  const std::size_t B = config.effective_batch();
  std::size_t done = 0;
  std::vector<Example> batch(B);
  while (state.iteration < config.max_iters && (options.stop_after == 0 || done < options.stop_after)) {
    for (auto& ex : batch) {
      const std::size_t i = uniform_index(state.data_rng, data.train.size());
      ex.subject = &data.train[i];
      ex.scores = cache.empty() ? nullptr : &cache[i];
    }
    const std::uint64_t it = state.iteration;
    StepLosses losses;
    try {
      losses = train_step(state, batch, config);
    } catch (const NonFiniteError& e) {
      throw std::runtime_error("non-finite value at iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!std::isfinite(losses.l_tot))
      throw std::runtime_error("non-finite loss at iteration " + std::to_string(it) + " (l_seg=" + g17(losses.l_seg) +
                               ", l_class=" + g17(losses.l_class) + ")");
    ++done;
    TraceRow row{it, losses.l_seg, losses.l_class, losses.lambda, kNaN};
    if (!data.val.empty() && (state.iteration % config.val_every == 0 || state.iteration == config.max_iters)) {
      row.val_dice = validation_dice(state.model, data.val);
      if (row.val_dice > state.best_val_dice) {
        state.best_val_dice = row.val_dice;
        state.best_iteration = state.iteration;
        if (options.out_dir)
          save_model(*options.out_dir / "best.ckpt", state.model, {{"iteration", std::to_string(state.iteration)}});
      }
      log("iter " + std::to_string(state.iteration) + " l_seg " + g17(losses.l_seg) + " val_dice " + g17(row.val_dice));
    }
    state.trace.push_back(row);
  }
  if (options.out_dir) {
    const auto& dir = *options.out_dir;
    save_model(dir / "model.ckpt", state.model, {{"iteration", std::to_string(state.iteration)}});
    if (data.val.empty()) save_model(dir / "best.ckpt", state.model, {{"iteration", std::to_string(state.iteration)}});
    io::write_file_atomic(dir / "trace.csv", trace_csv(state.trace));
    save_state(dir / "state.bin", state);
  }
  return state;
}

void FmodConfig::validate() const {
  net.validate();
  if (adam.lr <= 0.0) throw std::invalid_argument("classifier lr must be positive");
  adam.validate();
  if (iters == 0 || batch == 0) throw std::invalid_argument("classifier iters and batch must be positive");
  check_precision(precision);
}

FmodConfig FmodConfig::from_config(KeyValueConfig& kv) {
  FmodConfig c;
  c.net.stages = kv.get_size("stages", c.net.stages);
  c.net.blocks_per_stage = kv.get_size("blocks", c.net.blocks_per_stage);
  c.net.convs_per_block = kv.get_size("convs", c.net.convs_per_block);
  c.net.base_filters = kv.get_size("filters", c.net.base_filters);
  c.adam.lr = kv.get_double("lr", c.adam.lr);
  c.adam.weight_decay = kv.get_double("weight_decay", c.adam.weight_decay);
  c.iters = kv.get_size("iters", c.iters);
  c.batch = kv.get_size("batch", c.batch);
  c.seed = kv.get_u64("seed", c.seed);
  c.precision = static_cast<int>(kv.get_size("precision", static_cast<std::size_t>(c.precision)));
  kv.reject_unknown();
  c.validate();
  return c;
}

io::Metadata FmodConfig::to_metadata() const {
  return {{"stages", std::to_string(net.stages)},     {"blocks", std::to_string(net.blocks_per_stage)},
          {"convs", std::to_string(net.convs_per_block)}, {"filters", std::to_string(net.base_filters)},
          {"lr", g17(adam.lr)},                        {"weight_decay", g17(adam.weight_decay)},
          {"iters", std::to_string(iters)},            {"batch", std::to_string(batch)},
          {"seed", std::to_string(seed)},              {"precision", std::to_string(precision)}};
}

double classifier_accuracy(const modality::ClassifierConfig& net, ad::ParamSet& params,
                           const std::vector<synth::Subject>& subjects) {
  std::vector<std::size_t> correct(subjects.size(), 0), total(subjects.size(), 0);
  parallel_for(subjects.size(), [&](std::size_t i) {
    const auto& s = subjects[i];
    for (std::size_t n = 0; n < s.scans.size() && n < s.labels.size(); ++n) {
      const Tensor probs = modality::classify(modality::normalize_scan(s.scans[n]), net, params);
      std::size_t best = 0;
      for (std::size_t m = 1; m < probs.size(); ++m)
        if (probs[m] > probs[best]) best = m;
      correct[i] += best == s.labels[n].index();
      ++total[i];
    }
  });
  const double c = static_cast<double>(std::accumulate(correct.begin(), correct.end(), std::size_t{0}));
  const double t = static_cast<double>(std::accumulate(total.begin(), total.end(), std::size_t{0}));
  return t > 0 ? c / t : kNaN;
}

FmodResult train_fmod(const FmodConfig& cfg, const synth::Dataset& data,
                      const std::function<void(const std::string&)>& log) {
  FmodConfig config = cfg;
  if (data.train.empty()) throw std::invalid_argument("empty dataset: no training subjects");
  const auto& first = data.train.front().scans.at(0);
  config.net.height = first.dim(0);
  config.net.width = first.dim(1);
  config.validate();

  std::vector<Tensor> scans;
  std::vector<ModalityLabel> labels;
  for (const auto& s : data.train) {
    if (s.labels.size() != s.scans.size())
      throw std::invalid_argument("dataset lacks modality labels (subject " + s.id + ")");
    check_extent(s, config.net.height);
    for (std::size_t n = 0; n < s.scans.size(); ++n) {
      scans.push_back(modality::normalize_scan(s.scans[n]));
      labels.push_back(s.labels[n]);
    }
  }

  Rng init = make_stream(config.seed, "fmod-init");
  Rng pick = make_stream(config.seed, "fmod-data");
  FmodResult result;
  result.net = config.net;
  modality::init_classifier(result.params, config.net, init);
  if (config.precision == 32) round_trainable(result.params);
  ad::Adam opt(config.adam);
  for (std::size_t it = 0; it < config.iters; ++it) {
    ad::Tape tape;
    std::vector<Var> vars;
    std::vector<ModalityLabel> y;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t i = uniform_index(pick, scans.size());
      vars.push_back(tape.constant(scans[i]));
      y.push_back(labels[i]);
    }
    Var loss = modality::class_loss(modality::classify_set(tape, vars, config.net, result.params), y);
    result.params.zero_grad();
    tape.backward(loss);
    opt.step(result.params);
    if (config.precision == 32) round_trainable(result.params);
    result.loss_trace.push_back(loss.value().item());
    if (log && ((it + 1) % 100 == 0 || it + 1 == config.iters))
      log("fmod iter " + std::to_string(it + 1) + " loss " + g17(loss.value().item()));
  }
  for (const auto& split : synth::kSplits) {
    const auto& subjects = data.split(split);
    if (!subjects.empty()) result.accuracy[split] = classifier_accuracy(config.net, result.params, subjects);
  }
  return result;
}

}  // namespace pimms::train
