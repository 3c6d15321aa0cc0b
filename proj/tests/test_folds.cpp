#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "esres/folds.hpp"
#include "esres/rng.hpp"
#include "esres/synth.hpp"

using namespace esres;
using data::ManifestEntry;

namespace {

const char* kValid =
    "clip_path,class_label,fold_id,source_id,snippet_index\n"
    "a0.wav,0,1,A,0\n"
    "a1.wav,0,1,A,1\n"
    "b0.wav,1,2,B,0\n";

std::vector<ManifestEntry> grid_manifest(int sources, int snippets, int classes, int folds) {
  std::vector<ManifestEntry> entries;
  for (int s = 0; s < sources; ++s)
    for (int i = 0; i < snippets; ++i) {
      ManifestEntry e;
      e.clip_path = "s" + std::to_string(s) + "_" + std::to_string(i) + ".wav";
      e.class_label = s % classes;
      e.fold_id = s % folds + 1;
      e.source_id = "src" + std::to_string(s);
      e.snippet_index = i;
      entries.push_back(e);
    }
  return entries;
}

// Every entry index appears in exactly one round's test set.
void check_partition(const data::SplitAssignment& split, int n) {
  std::vector<int> seen(n, 0);
  for (const auto& round : split.test_sets)
    for (int id : round) {
      REQUIRE(id >= 0);
      REQUIRE(id < n);
      ++seen[id];
    }
  for (int c : seen) CHECK(c == 1);
}

}  // namespace

TEST_SUITE("folds") {

TEST_CASE("manifest parsing accepts the documented schema") {
  auto entries = data::parse_manifest_text(kValid);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].clip_path == "a0.wav");
  CHECK(entries[0].class_label == 0);
  CHECK(entries[0].fold_id == 1);
  CHECK(entries[0].source_id == "A");
  CHECK(entries[0].snippet_index == 0);
  CHECK(entries[2].source_id == "B");

  // column order is free as long as the names match
  auto reordered = data::parse_manifest_text(
      "fold_id,clip_path,snippet_index,source_id,class_label\n"
      "3,x.wav,7,S,4\n");
  REQUIRE(reordered.size() == 1);
  CHECK(reordered[0].fold_id == 3);
  CHECK(reordered[0].clip_path == "x.wav");
  CHECK(reordered[0].snippet_index == 7);
  CHECK(reordered[0].class_label == 4);
}

TEST_CASE("manifest schema violations are rejected") {
  CHECK_THROWS_AS(data::parse_manifest_text("clip_path,class_label,fold_id,source_id\n"),
                  FormatError);
  CHECK_THROWS_AS(
      data::parse_manifest_text(
          "clip_path,class_label,fold_id,source_id,snippet_index,extra\n"),
      FormatError);
  CHECK_THROWS_AS(data::parse_manifest_text(
                      "clip_path,class_label,fold_id,source_id,snippet_index\n"
                      "a.wav,0,1,A\n"),
                  FormatError);
  CHECK_THROWS_AS(data::parse_manifest_text(
                      "clip_path,class_label,fold_id,source_id,snippet_index\n"
                      "a.wav,zero,1,A,0\n"),
                  FormatError);

  // duplicate snippet key
  CHECK_THROWS_AS(data::parse_manifest_text(
                      "clip_path,class_label,fold_id,source_id,snippet_index\n"
                      "a.wav,0,1,A,0\n"
                      "b.wav,0,2,A,0\n"),
                  DataError);

  // fold range enforcement is opt-in via fold_count
  CHECK_NOTHROW(data::parse_manifest_text(
      "clip_path,class_label,fold_id,source_id,snippet_index\n"
      "a.wav,0,11,A,0\n"));
  CHECK_THROWS_AS(data::parse_manifest_text(
                      "clip_path,class_label,fold_id,source_id,snippet_index\n"
                      "a.wav,0,11,A,0\n",
                      10),
                  DataError);
  CHECK_THROWS_AS(data::parse_manifest_text(
                      "clip_path,class_label,fold_id,source_id,snippet_index\n"
                      "a.wav,0,0,A,0\n",
                      10),
                  DataError);
}

TEST_CASE("manifest write and parse round trip") {
  auto entries = grid_manifest(6, 3, 2, 4);
  const auto path =
      (std::filesystem::temp_directory_path() / "roundtrip_manifest.csv").string();
  data::write_manifest(entries, path);
  auto back = data::parse_manifest(path);
  REQUIRE(back.size() == entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    CHECK(back[i].clip_path == entries[i].clip_path);
    CHECK(back[i].class_label == entries[i].class_label);
    CHECK(back[i].fold_id == entries[i].fold_id);
    CHECK(back[i].source_id == entries[i].source_id);
    CHECK(back[i].snippet_index == entries[i].snippet_index);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(data::parse_manifest(path), FormatError);
}

TEST_CASE("official split groups by fold id") {
  auto entries = grid_manifest(10, 4, 2, 10);
  auto split = data::official_folds(entries, 10);
  CHECK(split.num_rounds == 10);
  check_partition(split, static_cast<int>(entries.size()));
  for (int r = 0; r < 10; ++r)
    for (int id : split.test_sets[r]) CHECK(entries[id].fold_id == r + 1);

  // an empty fold is a hard error naming the fold
  auto sparse = grid_manifest(4, 2, 2, 4);
  try {
    data::official_folds(sparse, 6);
    CHECK(false);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
  }
}

TEST_CASE("stratified split balances classes and ignores sources") {
  auto entries = grid_manifest(25, 4, 5, 10);  // 100 clips, 20 per class
  auto split = data::stratified_kfold(entries, 10, 7);
  CHECK(split.num_rounds == 10);
  check_partition(split, static_cast<int>(entries.size()));

  for (const auto& round : split.test_sets) {
    std::map<int, int> per_class;
    for (int id : round) ++per_class[entries[id].class_label];
    for (auto& [label, count] : per_class) CHECK(count == 2);  // 20 / 10 rounds
  }

  auto again = data::stratified_kfold(entries, 10, 7);
  CHECK(again.test_sets == split.test_sets);
  auto other = data::stratified_kfold(entries, 10, 8);
  CHECK(other.test_sets != split.test_sets);

  CHECK_THROWS_AS(data::stratified_kfold(entries, 1, 7), ConfigError);

  std::vector<std::string> warnings;
  auto tiny = grid_manifest(3, 1, 3, 3);  // one clip per class, k=2
  data::stratified_kfold(tiny, 2, 7, &warnings);
  REQUIRE(warnings.size() == 3);
  CHECK(warnings[0].find("class 0") != std::string::npos);
}

TEST_CASE("audit flags a source with clips on both sides") {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 4; ++i) {
    ManifestEntry e;
    e.clip_path = "clip" + std::to_string(i) + ".wav";
    e.class_label = 0;
    e.fold_id = i / 2 + 1;
    e.source_id = i < 2 ? "A" : "B";
    e.snippet_index = i % 2;
    entries.push_back(e);
  }
  // round 1 tests {A0, B0}: A1 and B1 remain in training
  data::SplitAssignment split;
  split.num_rounds = 1;
  split.test_sets = {{0, 2}};
  auto report = data::audit_split(entries, split);
  CHECK(!report.clean());
  CHECK(report.total_leaked == 2);
  REQUIRE(report.rounds.size() == 1);
  REQUIRE(report.rounds[0].sources.size() == 2);
  CHECK(report.rounds[0].sources[0].source_id == "A");
  CHECK(report.rounds[0].sources[0].train_clips == std::vector<int>{1});
  CHECK(report.rounds[0].sources[0].test_clips == std::vector<int>{0});

  // grouped by source: no leakage
  data::SplitAssignment grouped;
  grouped.num_rounds = 2;
  grouped.test_sets = {{0, 1}, {2, 3}};
  CHECK(data::audit_split(entries, grouped).clean());
}

TEST_CASE("official splits of grouped manifests are always clean") {
  auto entries = grid_manifest(20, 4, 4, 10);
  auto report = data::audit_split(entries, data::official_folds(entries, 10));
  CHECK(report.clean());
  CHECK(report.total_leaked == 0);
}

TEST_CASE("random per-clip splits of overlapped sources leak") {
  auto entries = grid_manifest(100, 4, 5, 10);
  auto split = data::stratified_kfold(entries, 10, 3);
  auto report = data::audit_split(entries, split);
  CHECK(report.total_leaked > 0);
}

TEST_CASE("leakage is invariant to class relabeling") {
  auto entries = grid_manifest(30, 4, 3, 10);
  auto split = data::stratified_kfold(entries, 10, 5);
  auto base = data::audit_split(entries, split);
  auto relabeled = entries;
  for (auto& e : relabeled) e.class_label = (e.class_label + 1) % 3;
  auto shifted = data::audit_split(relabeled, split);
  CHECK(shifted.total_leaked == base.total_leaked);
}

TEST_CASE("reports render counts and clip names") {
  auto entries = grid_manifest(10, 4, 2, 10);
  auto clean = data::audit_split(entries, data::official_folds(entries, 10));
  auto clean_text = data::report_text(clean, entries);
  CHECK(clean_text.find("no leakage") != std::string::npos);

  auto leaky = data::audit_split(entries, data::stratified_kfold(entries, 10, 1));
  REQUIRE(leaky.total_leaked > 0);
  auto text = data::report_text(leaky, entries);
  CHECK(text.find("leaked") != std::string::npos);

  auto parsed = nlohmann::json::parse(data::report_json(leaky, entries));
  CHECK(parsed["total_leaked"].get<int>() == leaky.total_leaked);
  CHECK(parsed["clean"].get<bool>() == false);
  REQUIRE(parsed["rounds"].is_array());
  const auto& first = parsed["rounds"][0];
  CHECK(first["round"].get<int>() >= 1);
  CHECK(first["sources"][0]["train"].size() > 0);

  auto clean_parsed = nlohmann::json::parse(data::report_json(clean, entries));
  CHECK(clean_parsed["clean"].get<bool>() == true);
  CHECK(clean_parsed["rounds"].empty());
}

TEST_CASE("synthetic dataset has the documented layout") {
  data::SynthConfig sc;
  sc.num_sources = 8;
  sc.snippets_per_source = 4;
  sc.num_classes = 2;
  sc.num_folds = 8;
  sc.snippet_len = 4410;
  auto ds = data::synth_overlapped_manifest(sc);
  REQUIRE(ds.entries.size() == 32);
  REQUIRE(ds.clips.size() == 32);

  std::set<std::string> sources;
  std::map<std::string, std::set<int>> folds_by_source;
  for (const auto& e : ds.entries) {
    sources.insert(e.source_id);
    folds_by_source[e.source_id].insert(e.fold_id);
    CHECK(e.fold_id >= 1);
    CHECK(e.fold_id <= 8);
  }
  CHECK(sources.size() == 8);
  for (auto& [src, folds] : folds_by_source) CHECK(folds.size() == 1);

  for (const auto& clip : ds.clips) {
    CHECK(clip.length == 4410);
    CHECK(clip.channels == 1);
    CHECK(clip.sample_rate == sc.sample_rate);
  }

  // every class appears, and no fold is single-class when folds == classes
  std::set<int> labels;
  for (const auto& e : ds.entries) labels.insert(e.class_label);
  CHECK(labels.size() == 2);
}

TEST_CASE("consecutive snippets share half their samples exactly") {
  data::SynthConfig sc;
  sc.num_sources = 3;
  sc.snippets_per_source = 4;
  sc.snippet_len = 2000;
  auto ds = data::synth_overlapped_manifest(sc);
  const int half = sc.snippet_len / 2;
  for (int s = 0; s < sc.num_sources; ++s)
    for (int i = 0; i + 1 < sc.snippets_per_source; ++i) {
      const auto& a = ds.clips[s * sc.snippets_per_source + i];
      const auto& b = ds.clips[s * sc.snippets_per_source + i + 1];
      CHECK(std::memcmp(a.channel(0) + half, b.channel(0),
                        sizeof(float) * half) == 0);
    }
}

TEST_CASE("synthetic generation is seed-deterministic") {
  data::SynthConfig sc;
  sc.num_sources = 4;
  sc.snippets_per_source = 2;
  sc.snippet_len = 2000;
  sc.seed = 17;
  auto a = data::synth_overlapped_manifest(sc);
  auto b = data::synth_overlapped_manifest(sc);
  REQUIRE(a.clips.size() == b.clips.size());
  for (size_t i = 0; i < a.clips.size(); ++i) CHECK(a.clips[i].samples == b.clips[i].samples);
  sc.seed = 18;
  auto c = data::synth_overlapped_manifest(sc);
  CHECK(a.clips[0].samples != c.clips[0].samples);
}

TEST_CASE("synthetic official split is clean, per-clip split is not") {
  data::SynthConfig sc;
  sc.num_sources = 40;
  sc.snippets_per_source = 4;
  sc.num_classes = 4;
  sc.num_folds = 4;
  sc.snippet_len = 2000;
  auto ds = data::synth_overlapped_manifest(sc);

  auto official = data::official_folds(ds.entries, 4);
  CHECK(data::audit_split(ds.entries, official).clean());
  for (const auto& round : official.test_sets) CHECK(!round.empty());

  auto stratified = data::stratified_kfold(ds.entries, 4, 1);
  CHECK(data::audit_split(ds.entries, stratified).total_leaked > 0);

  // grouped folds stay class-mixed even with classes == folds
  for (const auto& round : official.test_sets) {
    std::set<int> labels;
    for (int id : round) labels.insert(ds.entries[id].class_label);
    CHECK(labels.size() > 1);
  }
}

TEST_CASE("synthetic config validation") {
  data::SynthConfig sc;
  sc.num_sources = 0;
  CHECK_THROWS_AS(data::synth_overlapped_manifest(sc), ConfigError);
  sc = {};
  sc.snippet_len = 2001;  // overlap needs an even length
  CHECK_THROWS_AS(data::synth_overlapped_manifest(sc), ConfigError);
  sc = {};
  sc.num_classes = 0;
  CHECK_THROWS_AS(data::synth_overlapped_manifest(sc), ConfigError);
}

TEST_CASE("written dataset decodes and matches its manifest") {
  data::SynthConfig sc;
  sc.num_sources = 2;
  sc.snippets_per_source = 2;
  sc.snippet_len = 2000;
  auto ds = data::synth_overlapped_manifest(sc);
  const auto dir = (std::filesystem::temp_directory_path() / "synth_out").string();
  data::write_dataset(ds, dir);

  auto entries = data::parse_manifest(dir + "/manifest.csv");
  REQUIRE(entries.size() == 4);
  for (const auto& e : entries) {
    auto clip = audio::decode_wav_file(dir + "/" + e.clip_path);
    CHECK(clip.length == 2000);
    CHECK(clip.sample_rate == sc.sample_rate);
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
