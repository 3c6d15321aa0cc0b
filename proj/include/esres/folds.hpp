#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "esres/error.hpp"

namespace esres::data {

struct ManifestEntry {
  std::string clip_path;
  int class_label = 0;
  int fold_id = 0;  // 1-based
  std::string source_id;
  int snippet_index = 0;
};

// k rounds; round r tests the listed entry indices, trains on the complement.
struct SplitAssignment {
  int num_rounds = 0;
  std::vector<std::vector<int>> test_sets;
};

struct LeakedSource {
  std::string source_id;
  std::vector<int> train_clips;
  std::vector<int> test_clips;
};

struct RoundLeakage {
  int round = 0;  // 1-based
  std::vector<LeakedSource> sources;
};

struct LeakageReport {
  std::vector<RoundLeakage> rounds;
  int total_leaked = 0;

  bool clean() const { return total_leaked == 0; }
};

// CSV with header clip_path,class_label,fold_id,source_id,snippet_index.
// fold_count > 0 additionally range-checks fold ids.
std::vector<ManifestEntry> parse_manifest(const std::string& path, int fold_count = 0);
std::vector<ManifestEntry> parse_manifest_text(const std::string& text, int fold_count = 0);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// Grouped split: round r tests exactly the clips with fold_id == r.
SplitAssignment official_folds(const std::vector<ManifestEntry>& entries, int k);

// Per-clip stratified shuffle split; deliberately ignores source grouping.
// Classes are processed in ascending label order, each shuffled with a seeded
// Fisher-Yates pass and dealt round-robin so earlier rounds take the extras.
SplitAssignment stratified_kfold(const std::vector<ManifestEntry>& entries, int k,
                                 uint64_t seed, std::vector<std::string>* warnings = nullptr);

// Flags every source with clips on both sides of a round's train/test line.
LeakageReport audit_split(const std::vector<ManifestEntry>& entries,
                          const SplitAssignment& assignment);

std::string report_text(const LeakageReport& report,
                        const std::vector<ManifestEntry>& entries);
std::string report_json(const LeakageReport& report,
                        const std::vector<ManifestEntry>& entries);

}  // namespace esres::data
