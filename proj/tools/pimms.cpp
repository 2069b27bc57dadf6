// pimms command-line entry point.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pimms/evaluation.hpp"
#include "pimms/training.hpp"
#include "pimms/verify.hpp"

namespace fs = std::filesystem;
using namespace pimms;

namespace {

/// Bad flag combinations; exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  Manifest(int argc, char** argv) : started_(utc_now()) {
    std::string cmd;
    for (int i = 0; i < argc; ++i) cmd += (i ? " " : "") + std::string(argv[i]);
    meta_["command"] = cmd;
    meta_["version"] = PIMMS_VERSION;
  }
  void set(const std::string& k, const std::string& v) { meta_[k] = v; }
  void config(const io::Metadata& cfg) {
    for (const auto& [k, v] : cfg) meta_["config." + k] = v;
  }
  void input(const std::string& name, const fs::path& p) { meta_["input." + name] = p.string(); }
  void artifact(const std::string& name, const fs::path& p) { meta_["artifact." + name] = p.string(); }
  void write(const fs::path& path) {
    meta_["started"] = started_;
    meta_["finished"] = utc_now();
    io::write_file_atomic(path, io::format_metadata(meta_));
  }

 private:
  std::string started_;
  io::Metadata meta_;
};

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig::from_map({}, "<defaults>") : KeyValueConfig::load(path);
}

void print_counts(const synth::Dataset& ds) {
  std::cout << "train:" << ds.train.size() << " val:" << ds.val.size() << " test:" << ds.test.size()
            << " holdout:" << ds.holdout.size() << "\n";
}

auto stderr_log = [](const std::string& msg) { std::cerr << msg << std::endl; };

struct Options {
  std::string config, out, data, fmod_checkpoint, variant, split = "test", checkpoint, labels, level = "quick";
  std::vector<std::string> checkpoints, scans;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

int cmd_gen_data(const Options& o, Manifest& m) {
  KeyValueConfig kv = load_config(o.config);
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  const auto cfg = synth::DatasetConfig::from_config(kv);
  const auto ds = synth::generate_dataset(cfg, o.out);
  print_counts(ds);
  m.config(cfg.to_metadata());
  m.set("seed", std::to_string(cfg.seed));
  m.artifact("dataset", o.out);
  m.write(fs::path(o.out) / "manifest.txt");
  return 0;
}

int cmd_train_fmod(const Options& o, Manifest& m) {
  KeyValueConfig kv = load_config(o.config);
  const auto cfg = train::FmodConfig::from_config(kv);
  const auto ds = synth::load_dataset(o.data);
  auto result = train::train_fmod(cfg, ds, stderr_log);
  const fs::path out(o.out);
  fs::create_directories(out);
  io::Metadata acc;
  for (const auto& [split, a] : result.accuracy) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", a);
    acc["accuracy_" + split] = buf;
    std::cout << split << " accuracy: " << buf << "\n";
  }
  save_classifier(out / "fmod.ckpt", result.net, result.params, acc);
  io::write_file_atomic(out / "accuracy.txt", io::format_metadata(acc));
  std::string trace = "iteration,loss\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, result.loss_trace[i]);
    trace += buf;
  }
  io::write_file_atomic(out / "fmod_trace.csv", trace);
  m.config(cfg.to_metadata());
  m.set("seed", std::to_string(cfg.seed));
  m.input("data", o.data);
  for (const char* a : {"fmod.ckpt", "accuracy.txt", "fmod_trace.csv"}) m.artifact(a, out / a);
  m.write(out / "manifest.txt");
  return 0;
}

int cmd_train(const Options& o, Manifest& m) {
  const Variant variant = parse_variant(o.variant);
  const bool offline = variant == Variant::soft || variant == Variant::hard;
  if (offline && o.fmod_checkpoint.empty()) throw UsageError(o.variant + " requires pretrained f_mod (--fmod-checkpoint)");
  if (!offline && !o.fmod_checkpoint.empty())
    throw UsageError(o.variant + " does not accept --fmod-checkpoint");
  KeyValueConfig kv = load_config(o.config);
  if (kv.has("variant") && kv.get_string("variant", "") != o.variant)
    throw UsageError("config variant '" + kv.get_string("variant", "") + "' contradicts --variant " + o.variant);
  kv.set("variant", o.variant);
  const auto cfg = train::TrainConfig::from_config(kv);

  const fs::path out(o.out);
  std::optional<ClassifierCheckpoint> fmod;
  if (offline) fmod = load_classifier(o.fmod_checkpoint);
  const auto ds = synth::load_dataset(o.data);

  train::TrainState state;
  if (o.resume && fs::exists(out / "state.bin")) {
    state = train::load_state(out / "state.bin");
    std::cerr << "resuming at iteration " << state.iteration << "\n";
  } else {
    state = train::init_state(cfg, fmod ? &*fmod : nullptr);
  }
  train::TrainOptions opts;
  opts.out_dir = out;
  opts.log = stderr_log;
  state = train::train(cfg, ds, std::move(state), opts);
  std::cout << "iterations: " << state.iteration << " best val Dice: " << state.best_val_dice << " (iteration "
            << state.best_iteration << ")\n";
  m.config(cfg.to_metadata());
  m.set("seed", std::to_string(cfg.seed));
  m.input("data", o.data);
  if (offline) m.input("fmod_checkpoint", o.fmod_checkpoint);
  for (const char* a : {"model.ckpt", "best.ckpt", "trace.csv", "state.bin"}) m.artifact(a, out / a);
  m.write(out / "manifest.txt");
  return 0;
}

int cmd_eval(const Options& o, Manifest& m) {
  std::vector<std::pair<Variant, fs::path>> specs;
  for (const auto& s : o.checkpoints) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--checkpoints expects variant=path, got '" + s + "'");
    try {
      specs.emplace_back(parse_variant(s.substr(0, eq)), s.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (std::find(synth::kSplits.begin(), synth::kSplits.end(), o.split) == synth::kSplits.end())
    throw UsageError("unknown split '" + o.split + "'");
  std::vector<Model> models;
  models.reserve(specs.size());
  for (const auto& [v, path] : specs) {
    models.push_back(load_model(path));
    if (models.back().variant != v)
      throw UsageError(path.string() + " holds a " + to_string(models.back().variant) + " model, not " + to_string(v));
  }
  const auto ds = synth::load_dataset(o.data);
  const auto& subjects = ds.split(o.split);
  if (subjects.empty()) throw std::runtime_error("split '" + o.split + "' is empty");
  std::vector<eval::VariantModel> vm;
  for (auto& model : models) vm.push_back({model.variant, &model});
  const auto grid = eval::evaluate_subsets(vm, subjects);
  const fs::path out(o.out);
  fs::create_directories(out);
  io::write_file_atomic(out / "grid.csv", grid.to_csv());
  io::write_file_atomic(out / "grid.txt", grid.to_table());
  std::cout << grid.to_table();
  m.set("split", o.split);
  m.input("data", o.data);
  for (const auto& [v, path] : specs) m.input("checkpoint." + to_string(v), path);
  m.artifact("grid.csv", out / "grid.csv");
  m.artifact("grid.txt", out / "grid.txt");
  m.write(out / "manifest.txt");
  return 0;
}

int cmd_infer(const Options& o, Manifest& m) {
  if (o.scans.empty() || o.scans.size() > kNumModalities)
    throw UsageError("--scans takes 1 to " + std::to_string(kNumModalities) + " files");
  Model model = load_model(o.checkpoint);
  std::vector<ModalityLabel> labels;
  if (!o.labels.empty()) {
    if (model.variant != Variant::hemis)
      throw UsageError("--labels is only accepted by hemis models; " + to_string(model.variant) +
                       " infers modalities itself");
    std::size_t start = 0;
    while (start <= o.labels.size()) {
      std::size_t end = o.labels.find(',', start);
      if (end == std::string::npos) end = o.labels.size();
      try {
        labels.emplace_back(parse_modality(o.labels.substr(start, end - start)));
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      start = end + 1;
    }
    if (labels.size() != o.scans.size()) throw UsageError("--labels must name one modality per scan");
  } else if (model.variant == Variant::hemis) {
    throw UsageError("hemis models need --labels");
  }
  std::vector<Tensor> scans;
  for (const auto& f : o.scans) scans.push_back(io::read_raw_tensor(f));
  for (const auto& s : scans)
    if (s.rank() != 2 || s.shape() != scans.front().shape())
      throw std::runtime_error("shape-inconsistent scans: " + shape_string(s.shape()) + " vs " +
                               shape_string(scans.front().shape()));
  const Tensor prob = predict(model, scans, labels);
  const fs::path out(o.out);
  fs::path prob_path = out;
  prob_path.replace_extension(".prob.rawt");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_raw_tensor(out, eval::threshold(prob));
  io::write_raw_tensor(prob_path, prob);
  std::cout << "wrote " << out.string() << " and " << prob_path.string() << "\n";
  m.input("checkpoint", o.checkpoint);
  for (std::size_t i = 0; i < o.scans.size(); ++i) m.input("scan" + std::to_string(i), o.scans[i]);
  m.artifact("mask", out);
  m.artifact("probabilities", prob_path);
  m.write(out.string() + ".manifest.txt");
  return 0;
}

int cmd_verify(const Options& o) {
  verify::Level level;
  try {
    level = verify::parse_level(o.level);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::size_t failed = 0;
  verify::run_suite(level, [&](const verify::CheckResult& r) {
    std::printf("%s %-40s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.passed;
  });
  std::printf("%s: %zu failing check(s)\n", failed ? "FAILED" : "OK", failed);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation-invariant multi-modal segmentation"};
  app.set_version_flag("--version", PIMMS_VERSION);
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
  gen->add_option("--config", o.config, "key=value dataset config")->check(CLI::ExistingFile);
  gen->add_option("--out", o.out, "output directory")->required();
  gen->add_option("--seed", o.seed, "overrides the config seed");

  auto* tf = app.add_subcommand("train-fmod", "Train the modality classifier alone");
  tf->add_option("--config", o.config, "key=value classifier config")->check(CLI::ExistingFile);
  tf->add_option("--data", o.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tf->add_option("--out", o.out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a segmentation variant");
  tr->add_option("--variant", o.variant, "hemis, soft, hard or online")
      ->required()
      ->check(CLI::IsMember({"hemis", "soft", "hard", "online"}));
  tr->add_option("--config", o.config, "key=value training config")->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--fmod-checkpoint", o.fmod_checkpoint, "pretrained classifier (soft/hard only)");
  tr->add_option("--out", o.out, "output directory")->required();
  tr->add_flag("--resume", o.resume, "continue from <out>/state.bin when present");

  auto* ev = app.add_subcommand("eval", "Evaluate variants on every modality subset");
  ev->add_option("--checkpoints", o.checkpoints, "variant=path entries")->required();
  ev->add_option("--data", o.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", o.split, "split to evaluate (default test)");
  ev->add_option("--out", o.out, "output directory")->required();

  auto* inf = app.add_subcommand("infer", "Segment an unlabelled set of scans");
  inf->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--scans", o.scans, "1-3 raw tensor files, any order")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", o.out, "output mask path (.rawt)")->required();
  inf->add_option("--labels", o.labels, "comma-separated modalities (hemis models only)");

  auto* ver = app.add_subcommand("verify", "Run the invariant suite");
  ver->add_option("--level", o.level, "quick or full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Manifest m(argc, argv);
    if (gen->parsed()) return cmd_gen_data(o, m);
    if (tf->parsed()) return cmd_train_fmod(o, m);
    if (tr->parsed()) return cmd_train(o, m);
    if (ev->parsed()) return cmd_eval(o, m);
    if (inf->parsed()) return cmd_infer(o, m);
    if (ver->parsed()) return cmd_verify(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
