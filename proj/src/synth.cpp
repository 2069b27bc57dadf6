#include "pimms/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pimms/parallel.hpp"

namespace pimms::synth {

namespace fs = std::filesystem;

namespace {

// Gaussian-smoothed white noise rescaled to zero mean and unit variance.
std::vector<double> smooth_noise(Rng& rng, std::size_t H, std::size_t W, double sigma) {
  std::vector<double> a(H * W);
  for (auto& v : a) v = normal(rng, 0.0, 1.0);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  std::vector<double> b(H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * a[y * W + clampi(static_cast<int>(x) + i, static_cast<int>(W))];
      b[y * W + x] = acc;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * b[clampi(static_cast<int>(y) + i, static_cast<int>(H)) * W + x];
      a[y * W + x] = acc;
    }
  double mean = 0.0, var = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  for (auto& v : a) v = (v - mean) / (sd > 0 ? sd : 1.0);
  return a;
}

// Stamps up to `count` noisy blobs with roughly `target_px` total pixels,
// restricted to brain pixels. Returns the mask.
std::vector<bool> stamp_lesions(Rng& rng, const std::vector<bool>& brain, std::size_t H, std::size_t W,
                                std::size_t count, double target_px) {
  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < brain.size(); ++p)
    if (brain[p]) candidates.push_back(p);
  std::vector<bool> mask(H * W, false);
  if (candidates.empty()) return mask;
  const std::vector<double> rough = smooth_noise(rng, H, W, 1.5);
  const double r0 = std::sqrt(target_px / static_cast<double>(count) / std::numbers::pi);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t c = candidates[uniform_index(rng, candidates.size())];
    const double cy = static_cast<double>(c / W), cx = static_cast<double>(c % W);
    const double r = r0 * uniform(rng, 0.8, 1.2);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t p = y * W + x;
        if (!brain[p]) continue;
        const double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
        if (d / std::max(r, 0.5) + 0.2 * rough[p] < 1.0 || p == c) mask[p] = true;
      }
  }
  return mask;
}

}  // namespace

void PhantomConfig::validate() const {
  if (height < 16 || width < 16) throw std::invalid_argument("phantom size must be at least 16x16");
  if (!(p_no_lesion >= 0.0 && p_no_lesion <= 1.0)) throw std::invalid_argument("p_no_lesion must lie in [0, 1]");
  if (max_lesions < 1) throw std::invalid_argument("max_lesions must be >= 1");
  if (!(lesion_fraction_min > 0.0 && lesion_fraction_min <= lesion_fraction_max && lesion_fraction_max < 0.5))
    throw std::invalid_argument("lesion fraction bounds must satisfy 0 < min <= max < 0.5");
  if (lesion_fraction_max * static_cast<double>(height * width) < 1.0)
    throw std::invalid_argument("lesion_fraction_max admits no lesion pixel at this size");
}

double LatentPhantom::lesion_fraction() const {
  double s = 0.0;
  for (double v : lesion_mask.data()) s += v;
  return s / static_cast<double>(lesion_mask.size());
}

LatentPhantom sample_phantom(Rng& rng, const PhantomConfig& config) {
  config.validate();
  const std::size_t H = config.height, W = config.width, P = H * W;
  const double fh = static_cast<double>(H), fw = static_cast<double>(W);

  const double cy = fh / 2.0 + uniform(rng, -1.5, 1.5), cx = fw / 2.0 + uniform(rng, -1.5, 1.5);
  const double ry = uniform(rng, 0.36, 0.44) * fh, rx = uniform(rng, 0.36, 0.44) * fw;
  const auto outline = smooth_noise(rng, H, W, fw / 8.0);
  const auto split = smooth_noise(rng, H, W, fw / 10.0);
  const auto field1 = smooth_noise(rng, H, W, fw / 6.0);
  const auto field2 = smooth_noise(rng, H, W, fw / 6.0);

  std::vector<bool> brain(P);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
      brain[y * W + x] = std::sqrt(dy * dy + dx * dx) + 0.08 * outline[y * W + x] < 1.0;
    }

  std::vector<bool> lesion(P, false);
  std::size_t count = 0;
  if (uniform(rng, 0.0, 1.0) >= config.p_no_lesion) {
    count = 1 + uniform_index(rng, config.max_lesions);
    const double lo = config.lesion_fraction_min * static_cast<double>(P);
    const double hi = config.lesion_fraction_max * static_cast<double>(P);
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      const double target = uniform(rng, config.lesion_fraction_min, config.lesion_fraction_max) * static_cast<double>(P);
      lesion = stamp_lesions(rng, brain, H, W, count, target);
      const double n = static_cast<double>(std::count(lesion.begin(), lesion.end(), true));
      ok = n >= lo && n <= hi;
    }
    if (!ok) {
      // Single compact blob grown pixel by pixel to the lower bound.
      count = 1;
      lesion.assign(P, false);
      const auto need = static_cast<std::size_t>(std::ceil(lo));
      std::vector<std::pair<double, std::size_t>> by_dist;
      const std::size_t c = static_cast<std::size_t>(cy) * W + static_cast<std::size_t>(cx);
      for (std::size_t p = 0; p < P; ++p)
        if (brain[p])
          by_dist.emplace_back(std::hypot(static_cast<double>(p / W) - static_cast<double>(c / W),
                                          static_cast<double>(p % W) - static_cast<double>(c % W)),
                               p);
      std::sort(by_dist.begin(), by_dist.end());
      for (std::size_t i = 0; i < std::min(need, by_dist.size()); ++i) lesion[by_dist[i].second] = true;
    }
  }

  LatentPhantom ph;
  ph.q1 = Tensor(Shape{H, W});
  ph.q2 = Tensor(Shape{H, W});
  ph.lesion_mask = Tensor(Shape{H, W});
  ph.regions.assign(P, Region::background);
  ph.lesion_count = count;
  for (std::size_t p = 0; p < P; ++p) {
    if (!brain[p]) continue;
    Region r = split[p] > 0.0 ? Region::tissue_b : Region::tissue_a;
    if (lesion[p]) r = Region::lesion;
    const TissueSignal& s = r == Region::lesion ? config.lesion : r == Region::tissue_b ? config.tissue_b : config.tissue_a;
    ph.regions[p] = r;
    ph.q1[p] = s.q1 + config.field_amplitude * field1[p];
    ph.q2[p] = s.q2 + config.field_amplitude * field2[p];
    ph.lesion_mask[p] = lesion[p] ? 1.0 : 0.0;
  }
  return ph;
}

Tensor render_modality(const LatentPhantom& phantom, const ModalityParams& params, Rng& rng) {
  Tensor img(phantom.q1.shape());
  for (std::size_t p = 0; p < img.size(); ++p) {
    img[p] = params.scale * (params.alpha * phantom.q1[p] + params.beta * phantom.q2[p]) + params.offset;
    if (params.sigma > 0.0) img[p] += normal(rng, 0.0, params.sigma);
  }
  return img;
}

Tensor render_modality(const LatentPhantom& phantom, const Protocol& protocol, std::size_t modality, Rng& rng) {
  if (modality >= kNumModalities) throw std::invalid_argument("render_modality: modality index out of range");
  return render_modality(phantom, protocol.modalities[modality], rng);
}

ProtocolFamily training_family() {
  const Range scale{0.8, 1.25}, offset{0.0, 0.1}, sigma{0.01, 0.04};
  return ProtocolFamily{"mixed",
                        {ModalityRange{{0.9, 1.1}, {0.05, 0.25}, scale, offset, sigma},
                         ModalityRange{{0.05, 0.25}, {0.9, 1.1}, scale, offset, sigma},
                         ModalityRange{{-0.45, -0.25}, {0.9, 1.1}, scale, offset, sigma}}};
}

ProtocolFamily holdout_family() {
  const Range scale{1.3, 1.6}, offset{0.1, 0.2}, sigma{0.04, 0.06};
  return ProtocolFamily{"holdout",
                        {ModalityRange{{0.7, 0.85}, {0.3, 0.45}, scale, offset, sigma},
                         ModalityRange{{0.3, 0.45}, {0.7, 0.85}, scale, offset, sigma},
                         ModalityRange{{-0.15, -0.02}, {0.7, 0.85}, scale, offset, sigma}}};
}

Protocol draw_protocol(const ProtocolFamily& family, std::string id, Rng& rng) {
  Protocol p;
  p.id = std::move(id);
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto& r = family.ranges[m];
    p.modalities[m] = ModalityParams{uniform(rng, r.alpha.lo, r.alpha.hi), uniform(rng, r.beta.lo, r.beta.hi),
                                     uniform(rng, r.scale.lo, r.scale.hi), uniform(rng, r.offset.lo, r.offset.hi),
                                     uniform(rng, r.sigma.lo, r.sigma.hi)};
  }
  return p;
}

bool outside_family(const Protocol& protocol, const ProtocolFamily& training) {
  for (const auto& mp : protocol.modalities)
    for (const auto& box : training.ranges)
      if (box.alpha.contains(mp.alpha) && box.beta.contains(mp.beta)) return false;
  return true;
}

void DatasetConfig::validate() const {
  phantom.validate();
  if (samples == 0) throw std::invalid_argument("dataset needs at least one sample");
  if (train_protocols == 0 || (holdout_samples > 0 && holdout_protocols == 0))
    throw std::invalid_argument("protocol pools must be non-empty");
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0)
    throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
}

DatasetConfig DatasetConfig::from_config(KeyValueConfig& kv) {
  DatasetConfig c;
  c.samples = kv.get_size("samples", c.samples);
  c.holdout_samples = kv.get_size("holdout_samples", c.holdout_samples);
  c.train_protocols = kv.get_size("train_protocols", c.train_protocols);
  c.holdout_protocols = kv.get_size("holdout_protocols", c.holdout_protocols);
  c.train_fraction = kv.get_double("train_fraction", c.train_fraction);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.seed = kv.get_u64("seed", c.seed);
  const std::size_t size = kv.get_size("size", c.phantom.height);
  c.phantom.height = kv.get_size("height", size);
  c.phantom.width = kv.get_size("width", size);
  c.phantom.p_no_lesion = kv.get_double("p_no_lesion", c.phantom.p_no_lesion);
  c.phantom.max_lesions = kv.get_size("max_lesions", c.phantom.max_lesions);
  c.phantom.lesion_fraction_min = kv.get_double("lesion_fraction_min", c.phantom.lesion_fraction_min);
  c.phantom.lesion_fraction_max = kv.get_double("lesion_fraction_max", c.phantom.lesion_fraction_max);
  c.phantom.field_amplitude = kv.get_double("field_amplitude", c.phantom.field_amplitude);
  kv.reject_unknown();
  c.validate();
  return c;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

io::Metadata DatasetConfig::to_metadata() const {
  return {{"samples", std::to_string(samples)},
          {"holdout_samples", std::to_string(holdout_samples)},
          {"train_protocols", std::to_string(train_protocols)},
          {"holdout_protocols", std::to_string(holdout_protocols)},
          {"train_fraction", fmt(train_fraction)},
          {"val_fraction", fmt(val_fraction)},
          {"seed", std::to_string(seed)},
          {"height", std::to_string(phantom.height)},
          {"width", std::to_string(phantom.width)},
          {"p_no_lesion", fmt(phantom.p_no_lesion)},
          {"max_lesions", std::to_string(phantom.max_lesions)},
          {"lesion_fraction_min", fmt(phantom.lesion_fraction_min)},
          {"lesion_fraction_max", fmt(phantom.lesion_fraction_max)},
          {"field_amplitude", fmt(phantom.field_amplitude)}};
}

const std::vector<Subject>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  if (name == "holdout") return holdout;
  throw std::invalid_argument("unknown split: " + name);
}

Subject make_subject(std::uint64_t seed, const Protocol& protocol, const PhantomConfig& config) {
  Rng rng(seed);
  LatentPhantom ph = sample_phantom(rng, config);
  std::vector<std::size_t> order(kNumModalities);
  for (std::size_t m = 0; m < order.size(); ++m) order[m] = m;
  std::shuffle(order.begin(), order.end(), rng);
  Subject s;
  s.protocol = protocol.id;
  s.seed = seed;
  for (auto m : order) {
    Tensor img = render_modality(ph, protocol, m, rng);
    io::round_to_f32(img.data());
    s.scans.push_back(std::move(img));
    s.labels.emplace_back(m);
  }
  s.mask = ph.lesion_mask;
  return s;
}

Dataset build_dataset(const DatasetConfig& config) {
  config.validate();
  Rng prng = make_stream(config.seed, "protocols");
  std::vector<Protocol> mixed, held;
  char id[32];
  for (std::size_t i = 0; i < config.train_protocols; ++i) {
    std::snprintf(id, sizeof id, "mixed-%02zu", i);
    mixed.push_back(draw_protocol(training_family(), id, prng));
  }
  for (std::size_t i = 0; i < config.holdout_protocols; ++i) {
    std::snprintf(id, sizeof id, "holdout-%02zu", i);
    held.push_back(draw_protocol(holdout_family(), id, prng));
  }

  const std::size_t n = config.samples;
  const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
  const auto n_val =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n))));

  std::vector<Subject> mixed_subjects(n), held_subjects(config.holdout_samples);
  parallel_for(n, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(config.seed, "sample", i);
    const auto& proto = mixed[derive_seed(config.seed, "sample-protocol", i) % mixed.size()];
    Subject s = make_subject(seed, proto, config.phantom);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%05zu", i);
    s.id = buf;
    s.split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    mixed_subjects[i] = std::move(s);
  });
  parallel_for(config.holdout_samples, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(config.seed, "holdout-sample", i);
    const auto& proto = held[derive_seed(config.seed, "holdout-protocol", i) % held.size()];
    Subject s = make_subject(seed, proto, config.phantom);
    char buf[32];
    std::snprintf(buf, sizeof buf, "h%05zu", i);
    s.id = buf;
    s.split = "holdout";
    held_subjects[i] = std::move(s);
  });

  Dataset ds;
  for (auto& s : mixed_subjects) {
    auto& dst = s.split == "train" ? ds.train : s.split == "val" ? ds.val : ds.test;
    dst.push_back(std::move(s));
  }
  ds.holdout = std::move(held_subjects);
  return ds;
}

void write_dataset(const Dataset& dataset, const DatasetConfig& config, const fs::path& root) {
  try {
    if (fs::exists(root) && !fs::is_empty(root) && !fs::exists(root / "dataset.txt"))
      throw std::runtime_error("refusing to overwrite non-dataset directory " + root.string());
    for (const auto& split : kSplits) fs::remove_all(root / split);
    fs::create_directories(root);
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("cannot write dataset to " + root.string() + ": " + e.what());
  }
  for (const auto& split : kSplits) {
    const auto& subjects = dataset.split(split);
    parallel_for(subjects.size(), [&](std::size_t i) {
      const Subject& s = subjects[i];
      const fs::path dir = root / split / s.id;
      fs::create_directories(dir);
      std::string labels;
      for (std::size_t k = 0; k < s.scans.size(); ++k) {
        io::write_raw_tensor(dir / ("scan_" + std::to_string(k) + ".rawt"), s.scans[k]);
        if (k) labels += ',';
        labels += modality_name(s.labels[k].index());
      }
      io::write_raw_tensor(dir / "mask.rawt", s.mask);
      io::write_file_atomic(dir / "meta.txt", io::format_metadata({{"labels", labels},
                                                                   {"protocol", s.protocol},
                                                                   {"seed", std::to_string(s.seed)},
                                                                   {"split", split}}));
    });
  }
  io::Metadata meta = config.to_metadata();
  for (const auto& split : kSplits) meta["count_" + split] = std::to_string(dataset.split(split).size());
  io::write_file_atomic(root / "dataset.txt", io::format_metadata(meta));
}

Dataset generate_dataset(const DatasetConfig& config, const fs::path& root) {
  Dataset ds = build_dataset(config);
  write_dataset(ds, config, root);
  return ds;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + root.string());
  Dataset ds;
  for (const auto& split : kSplits) {
    const fs::path dir = root / split;
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> samples;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) samples.push_back(e.path());
    std::sort(samples.begin(), samples.end());
    auto& dst = const_cast<std::vector<Subject>&>(ds.split(split));
    for (const auto& p : samples) {
      const io::Metadata meta = io::parse_metadata(io::read_file(p / "meta.txt"));
      Subject s;
      s.id = p.filename().string();
      s.split = split;
      auto it = meta.find("labels");
      if (it == meta.end() || it->second.empty())
        throw std::runtime_error("sample " + p.string() + " has no modality labels");
      std::size_t start = 0;
      const std::string& labels = it->second;
      while (start <= labels.size()) {
        std::size_t end = labels.find(',', start);
        if (end == std::string::npos) end = labels.size();
        s.labels.emplace_back(parse_modality(labels.substr(start, end - start)));
        start = end + 1;
      }
      for (std::size_t k = 0; k < s.labels.size(); ++k)
        s.scans.push_back(io::read_raw_tensor(p / ("scan_" + std::to_string(k) + ".rawt")));
      s.mask = io::read_raw_tensor(p / "mask.rawt");
      if (meta.count("protocol")) s.protocol = meta.at("protocol");
      if (meta.count("seed")) s.seed = std::stoull(meta.at("seed"));
      dst.push_back(std::move(s));
    }
  }
  return ds;
}

}  // namespace pimms::synth
