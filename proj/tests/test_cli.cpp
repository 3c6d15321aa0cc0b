#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "esres/dsp.hpp"
#include "esres/folds.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& work_root() {
  static const fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "esres_cli_suite";
    std::error_code ec;
    fs::remove_all(d, ec);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

Run run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out = work_root() / ("stdout_" + std::to_string(counter));
  const fs::path err = work_root() / ("stderr_" + std::to_string(counter));
  ++counter;
  const std::string cmd =
      std::string(ESRES_CLI_PATH) + " " + args + " > " + q(out) + " 2> " + q(err);
  const int rc = std::system(cmd.c_str());
  Run r;
  if (rc != -1 && WIFEXITED(rc)) r.code = WEXITSTATUS(rc);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

size_t count_ext(const fs::path& dir, const std::string& ext) {
  size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) ++n;
  return n;
}

fs::path dataset_dir() { return work_root() / "data"; }
fs::path dataset_manifest() { return dataset_dir() / "manifest.csv"; }

const std::string kSynthArgs =
    "--sources 8 --snippets 2 --num-classes 2 --folds 4 --snippet-len 4410";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage errors") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("--help").out.find("synth") != std::string::npos);
  CHECK(run_cli("").code == 2);           // a subcommand is required
  CHECK(run_cli("audit").code == 2);      // --manifest is required
  CHECK(run_cli("synth --bogus").code == 2);
}

TEST_CASE("synth writes a seed-stable dataset") {
  const Run r = run_cli("synth --out " + q(dataset_dir()) + " " + kSynthArgs + " --seed 11");
  CHECK(r.code == 0);
  CHECK(r.out.find("wrote 16 clips") != std::string::npos);
  REQUIRE(fs::exists(dataset_manifest()));
  CHECK(count_ext(dataset_dir(), ".wav") == 16);
  const auto entries = esres::data::parse_manifest(dataset_manifest().string(), 4);
  REQUIRE(entries.size() == 16);
  CHECK(entries[0].source_id != entries[2].source_id);

  const fs::path again = work_root() / "data_again";
  CHECK(run_cli("synth --out " + q(again) + " " + kSynthArgs + " --seed 11").code == 0);
  CHECK(slurp(again / "manifest.csv") == slurp(dataset_manifest()));
  CHECK(slurp(again / entries[0].clip_path) == slurp(dataset_dir() / entries[0].clip_path));

  const fs::path other = work_root() / "data_other";
  CHECK(run_cli("synth --out " + q(other) + " " + kSynthArgs + " --seed 12").code == 0);
  CHECK(slurp(other / entries[0].clip_path) != slurp(dataset_dir() / entries[0].clip_path));

  CHECK(run_cli("synth --out " + q(work_root() / "bad") + " --sources 0").code == 2);
}

TEST_CASE("extract caches spectrograms") {
  REQUIRE(fs::exists(dataset_manifest()));
  const fs::path feat = work_root() / "features";
  const Run r = run_cli("extract --in " + q(dataset_dir()) + " --out " + q(feat));
  CHECK(r.code == 0);
  CHECK(r.out.find("3x341x5") != std::string::npos);
  CHECK(count_ext(feat, ".esrs") == 16);
  const auto entries = esres::data::parse_manifest(dataset_manifest().string(), 4);
  fs::path one = feat / fs::path(entries[0].clip_path).stem();
  one += ".esrs";
  const auto spec = esres::dsp::read_spectrogram(one.string());
  CHECK(spec.bands == 3);
  CHECK(spec.bins == 341);
  CHECK(spec.frames == 5);

  const fs::path feat2 = work_root() / "features_stereo";
  const Run r2 = run_cli("extract --in " + q(dataset_dir() / entries[0].clip_path) +
                         " --out " + q(feat2) + " --stereo");
  CHECK(r2.code == 0);
  CHECK(count_ext(feat2, ".esrs") == 2);
  CHECK(r2.out.find(".ch0.esrs") != std::string::npos);
  CHECK(r2.out.find(".ch1.esrs") != std::string::npos);

  const fs::path empty = work_root() / "empty";
  fs::create_directories(empty);
  const Run r3 = run_cli("extract --in " + q(empty) + " --out " + q(feat));
  CHECK(r3.code == 0);
  CHECK(r3.err.find("no .wav") != std::string::npos);

  CHECK(run_cli("extract --in " + q(work_root() / "nope") + " --out " + q(feat)).code == 2);
}

TEST_CASE("audit separates grouped and stratified splits") {
  REQUIRE(fs::exists(dataset_manifest()));
  const Run clean =
      run_cli("audit --manifest " + q(dataset_manifest()) + " --split official --k 4");
  CHECK(clean.code == 0);
  CHECK(clean.out.find("no leakage") != std::string::npos);

  const fs::path json = work_root() / "audit.json";
  const Run leaky = run_cli("audit --manifest " + q(dataset_manifest()) +
                            " --split stratified --k 4 --seed 1 --json " + q(json));
  CHECK(leaky.code == 1);
  CHECK(leaky.out.find("leaked") != std::string::npos);
  const auto doc = nlohmann::json::parse(slurp(json));
  CHECK(doc["clean"] == false);
  CHECK(doc["total_leaked"].get<int>() > 0);

  CHECK(run_cli("audit --manifest " + q(work_root() / "nope.csv")).code == 2);

  const fs::path bad = work_root() / "bad.csv";
  std::ofstream(bad) << "not,a,manifest\n1,2\n";
  CHECK(run_cli("audit --manifest " + q(bad)).code == 2);

  const fs::path dup = work_root() / "dup.csv";
  std::ofstream(dup) << "clip_path,class_label,fold_id,source_id,snippet_index\n"
                        "a.wav,0,1,A,0\nb.wav,0,1,A,0\n";
  CHECK(run_cli("audit --manifest " + q(dup)).code == 3);
}

TEST_CASE("train and eval round trip deterministically") {
  REQUIRE(fs::exists(dataset_manifest()));
  const std::string common = "train --manifest " + q(dataset_manifest()) +
                             " --epochs 2 --batch 8 --width-scale 0.125 --no-augment"
                             " --seed 3 --split official --k 4";
  const fs::path w1 = work_root() / "w1.esrw";
  const fs::path m1 = work_root() / "m1.tsv";
  const Run t1 = run_cli(common + " --out " + q(w1) + " --metrics " + q(m1));
  CHECK(t1.code == 0);
  REQUIRE(fs::exists(w1));
  std::istringstream metrics(slurp(m1));
  std::string line;
  size_t lines = 0;
  while (std::getline(metrics, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
  }
  CHECK(lines == 2);

  const fs::path w2 = work_root() / "w2.esrw";
  CHECK(run_cli(common + " --out " + q(w2)).code == 0);
  CHECK(slurp(w1) == slurp(w2));

  const std::string eval_common = "eval --manifest " + q(dataset_manifest()) +
                                  " --split official --k 4 --width-scale 0.125 --seed 3";
  const Run ev = run_cli(eval_common + " --weights " + q(w1));
  CHECK(ev.code == 0);
  CHECK(ev.out.find("round 1 accuracy") != std::string::npos);
  CHECK(ev.out.find("mean accuracy") != std::string::npos);

  // weights trained at another width do not restore
  const Run mismatch = run_cli("eval --manifest " + q(dataset_manifest()) +
                               " --split official --k 4 --width-scale 0.25 --seed 3"
                               " --weights " + q(w1));
  CHECK(mismatch.code == 3);

  CHECK(run_cli(eval_common).code == 2);  // neither --weights nor --cv

  const Run cv = run_cli("eval --manifest " + q(dataset_manifest()) +
                         " --split official --k 4 --width-scale 0.125 --seed 3 --cv"
                         " --epochs 1 --batch 8 --no-augment");
  CHECK(cv.code == 0);
  CHECK(cv.out.find("round 4 accuracy") != std::string::npos);
  CHECK(cv.err.find("# round 4") != std::string::npos);

  // validation on a held-out round adds a fifth metrics column
  const fs::path m3 = work_root() / "m3.tsv";
  const Run t3 = run_cli(common + " --round 1 --out " + q(work_root() / "w3.esrw") +
                         " --metrics " + q(m3));
  CHECK(t3.code == 0);
  std::istringstream metrics3(slurp(m3));
  REQUIRE(std::getline(metrics3, line));
  CHECK(std::count(line.begin(), line.end(), '\t') == 4);

  CHECK(run_cli(common + " --round 9 --out " + q(work_root() / "w9.esrw")).code == 2);
}

}  // TEST_SUITE
