#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <sys/wait.h>

#include "helpers.hpp"
#include "pimms/io.hpp"

namespace fs = std::filesystem;
using testing::slurp;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& args, const fs::path& scratch) {
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = std::string(PIMMS_CLI) + " " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

void write(const fs::path& p, const std::string& text) { pimms::io::write_file_atomic(p, text); }

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "manifest.txt")
      out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

const char* kTinyTrain =
    "patch=16\nbatch=2\nmax_iters=6\nval_every=3\nbackend_layers=1\nbackend_filters=3\n"
    "frontend_hidden_filters=3\nfmod_stages=1\nfmod_blocks=1\nfmod_convs=1\nfmod_filters=2\n";
const char* kTinyFmod = "stages=1\nblocks=1\nconvs=1\nfilters=2\niters=5\nbatch=4\n";

/// A small dataset plus trained hemis, soft and f_mod artifacts shared by the cases below.
struct Workspace {
  testing::TempDir dir{"cli"};
  bool ready = false;

  Workspace() {
    write(dir / "data.cfg", "samples=20\nholdout_samples=4\nsize=16\n");
    write(dir / "train.cfg", kTinyTrain);
    write(dir / "fmod.cfg", kTinyFmod);
    const auto d = dir.path().string();
    ready = run("gen-data --config " + d + "/data.cfg --out " + d + "/data", dir.path()).code == 0 &&
            run("train-fmod --config " + d + "/fmod.cfg --data " + d + "/data --out " + d + "/fmod", dir.path()).code == 0 &&
            run("train --variant hemis --config " + d + "/train.cfg --data " + d + "/data --out " + d + "/hemis",
                dir.path()).code == 0 &&
            run("train --variant soft --config " + d + "/train.cfg --data " + d + "/data --fmod-checkpoint " + d +
                    "/fmod/fmod.ckpt --out " + d + "/soft",
                dir.path()).code == 0;
  }
  std::string operator()(const std::string& rel) const { return (dir / rel).string(); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    testing::TempDir dir("cli-usage");
    CHECK(run("gen-data", dir.path()).code == 2);
    CHECK(run("", dir.path()).code == 2);
    CHECK(run("bogus", dir.path()).code == 2);
    write(dir / "bad.cfg", "sampels=10\n");
    auto r = run("gen-data --config " + (dir / "bad.cfg").string() + " --out " + (dir / "x").string(), dir.path());
    CHECK(r.code == 2);
    CHECK(r.err.find("sampels") != std::string::npos);
    write(dir / "malformed.cfg", "samples=ten\n");
    CHECK(run("gen-data --config " + (dir / "malformed.cfg").string() + " --out " + (dir / "y").string(), dir.path())
              .code == 2);
    CHECK(run("verify --level sideways", dir.path()).code == 2);
  }

  TEST_CASE("gen-data prints split counts and is deterministic") {
    testing::TempDir dir("cli-gen");
    write(dir / "d.cfg", "samples=100\nholdout_samples=5\nsize=16\n");
    const std::string base = "gen-data --config " + (dir / "d.cfg").string() + " --out ";
    auto a = run(base + (dir / "a").string(), dir.path());
    REQUIRE(a.code == 0);
    CHECK(a.out.find("train:80 val:10 test:10") != std::string::npos);
    REQUIRE(run(base + (dir / "b").string(), dir.path()).code == 0);
    CHECK(tree_bytes(dir / "a") == tree_bytes(dir / "b"));
    CHECK(fs::exists(dir / "a" / "manifest.txt"));
    REQUIRE(run(base + (dir / "c").string() + " --seed 77", dir.path()).code == 0);
    CHECK(tree_bytes(dir / "a") != tree_bytes(dir / "c"));
  }

  TEST_CASE("offline variants need a pretrained classifier") {
    auto& w = workspace();
    REQUIRE(w.ready);
    auto r = run("train --variant soft --config " + w("train.cfg") + " --data " + w("data") + " --out " + w("nofmod"),
                 w.dir.path());
    CHECK(r.code == 2);
    CHECK(r.err.find("soft requires pretrained f_mod") != std::string::npos);
    r = run("train --variant hard --data " + w("data") + " --out " + w("nofmod"), w.dir.path());
    CHECK(r.code == 2);
    r = run("train --variant online --config " + w("train.cfg") + " --data " + w("data") + " --fmod-checkpoint " +
                w("fmod/fmod.ckpt") + " --out " + w("nofmod"),
            w.dir.path());
    CHECK(r.code == 2);
    CHECK_FALSE(fs::exists(w.dir / "nofmod"));
  }

  TEST_CASE("training writes artifacts and a manifest") {
    auto& w = workspace();
    REQUIRE(w.ready);
    for (const char* a : {"model.ckpt", "best.ckpt", "trace.csv", "state.bin", "manifest.txt"}) {
      CHECK(fs::exists(w.dir / "hemis" / a));
      CHECK(fs::exists(w.dir / "soft" / a));
    }
    const auto hemis = pimms::io::parse_metadata(slurp(w.dir / "hemis" / "manifest.txt"));
    CHECK(hemis.count("input.fmod_checkpoint") == 0);
    CHECK(hemis.count("input.data") == 1);
    CHECK(hemis.at("config.variant") == "hemis");
    const auto soft = pimms::io::parse_metadata(slurp(w.dir / "soft" / "manifest.txt"));
    CHECK(soft.at("input.fmod_checkpoint") == w("fmod/fmod.ckpt"));
    CHECK(fs::exists(w.dir / "fmod" / "accuracy.txt"));
  }

  TEST_CASE("infer is independent of scan order and accepts FLAIR alone") {
    auto& w = workspace();
    REQUIRE(w.ready);
    const fs::path subj = *fs::directory_iterator(w.dir / "data" / "test");
    const auto meta = pimms::io::parse_metadata(slurp(subj / "meta.txt"));
    const std::string s0 = (subj / "scan_0.rawt").string(), s1 = (subj / "scan_1.rawt").string(),
                      s2 = (subj / "scan_2.rawt").string();
    const std::string ckpt = " --checkpoint " + w("soft/model.ckpt");
    REQUIRE(run("infer" + ckpt + " --scans " + s0 + " " + s1 + " " + s2 + " --out " + w("inf/fwd.rawt"), w.dir.path())
                .code == 0);
    REQUIRE(run("infer" + ckpt + " --scans " + s2 + " " + s1 + " " + s0 + " --out " + w("inf/rev.rawt"), w.dir.path())
                .code == 0);
    CHECK(slurp(w.dir / "inf" / "fwd.rawt") == slurp(w.dir / "inf" / "rev.rawt"));
    CHECK(slurp(w.dir / "inf" / "fwd.prob.rawt") == slurp(w.dir / "inf" / "rev.prob.rawt"));
    auto mask = pimms::io::read_raw_tensor(w.dir / "inf" / "fwd.rawt");
    CHECK(mask.shape() == pimms::Shape{16, 16});

    // Pick the FLAIR scan by its label.
    const std::string labels = meta.at("labels");
    std::size_t flair = 0;
    for (std::size_t k = 0, pos = 0; k < 3; ++k) {
      const std::size_t end = labels.find(',', pos);
      if (labels.substr(pos, end - pos) == "FLAIR") flair = k;
      pos = end + 1;
    }
    const std::string f = (subj / ("scan_" + std::to_string(flair) + ".rawt")).string();
    CHECK(run("infer" + ckpt + " --scans " + f + " --out " + w("inf/flair.rawt"), w.dir.path()).code == 0);
    CHECK(fs::exists(w.dir / "inf" / "flair.rawt"));

    // hemis needs labels; the others refuse them.
    CHECK(run("infer --checkpoint " + w("hemis/model.ckpt") + " --scans " + f + " --out " + w("inf/h.rawt"),
              w.dir.path()).code == 2);
    CHECK(run("infer --checkpoint " + w("hemis/model.ckpt") + " --scans " + f + " --labels FLAIR --out " +
                  w("inf/h.rawt"),
              w.dir.path()).code == 0);
    CHECK(run("infer" + ckpt + " --scans " + f + " --labels FLAIR --out " + w("inf/x.rawt"), w.dir.path()).code == 2);
  }

  TEST_CASE("eval writes the subset grid") {
    auto& w = workspace();
    REQUIRE(w.ready);
    auto r = run("eval --checkpoints hemis=" + w("hemis/best.ckpt") + " soft=" + w("soft/best.ckpt") + " --data " +
                     w("data") + " --out " + w("eval"),
                 w.dir.path());
    REQUIRE(r.code == 0);
    const std::string csv = slurp(w.dir / "eval" / "grid.csv");
    CHECK(csv.rfind("pattern,variant,n,median_dice,mean_asd,p_vs_hemis,flag", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 15);
    CHECK(r.out == slurp(w.dir / "eval" / "grid.txt"));
    CHECK(run("eval --checkpoints soft=" + w("hemis/best.ckpt") + " --data " + w("data") + " --out " + w("e2"),
              w.dir.path()).code == 2);
    CHECK(run("eval --checkpoints hemis=" + w("hemis/best.ckpt") + " --split nope --data " + w("data") + " --out " +
                  w("e3"),
              w.dir.path()).code == 2);
  }

  TEST_CASE("verify quick passes within a minute") {
    testing::TempDir dir("cli-verify");
    const auto t0 = std::chrono::steady_clock::now();
    auto r = run("verify --level quick", dir.path());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(secs < 60.0);
  }
}
