#include "esres/folds.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "esres/rng.hpp"

namespace esres::data {

namespace {

const char* kHeader = "clip_path,class_label,fold_id,source_id,snippet_index";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

int parse_int(const std::string& s, const std::string& what, int line_no) {
  try {
    size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("manifest: line " + std::to_string(line_no) + ": bad " + what + " '" +
                      s + "'");
  }
}

}  // namespace

std::vector<ManifestEntry> parse_manifest_text(const std::string& text, int fold_count) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest: empty file");

  const auto header = split_csv_line(line);
  const auto expected = split_csv_line(kHeader);
  for (const auto& col : expected)
    if (std::find(header.begin(), header.end(), col) == header.end())
      throw FormatError("manifest: missing column '" + col + "'");
  if (header.size() != expected.size()) throw FormatError("manifest: unexpected extra columns");
  std::vector<int> order(expected.size());
  for (size_t i = 0; i < expected.size(); ++i)
    order[i] = static_cast<int>(std::find(header.begin(), header.end(), expected[i]) -
                                header.begin());

  std::vector<ManifestEntry> entries;
  std::set<std::pair<std::string, int>> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != expected.size())
      throw FormatError("manifest: line " + std::to_string(line_no) + ": expected " +
                        std::to_string(expected.size()) + " fields, got " +
                        std::to_string(fields.size()));
    ManifestEntry e;
    e.clip_path = fields[order[0]];
    e.class_label = parse_int(fields[order[1]], "class_label", line_no);
    e.fold_id = parse_int(fields[order[2]], "fold_id", line_no);
    e.source_id = fields[order[3]];
    e.snippet_index = parse_int(fields[order[4]], "snippet_index", line_no);
    if (e.fold_id < 1 || (fold_count > 0 && e.fold_id > fold_count))
      throw DataError("manifest: line " + std::to_string(line_no) + ": fold_id " +
                      std::to_string(e.fold_id) + " outside 1.." +
                      std::to_string(fold_count > 0 ? fold_count : e.fold_id));
    if (!seen.insert({e.source_id, e.snippet_index}).second)
      throw DataError("manifest: duplicate snippet (" + e.source_id + ", " +
                      std::to_string(e.snippet_index) + ")");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> parse_manifest(const std::string& path, int fold_count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("manifest: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_manifest_text(text, fold_count);
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("manifest: cannot open " + path + " for writing");
  f << kHeader << "\n";
  for (const auto& e : entries)
    f << e.clip_path << "," << e.class_label << "," << e.fold_id << "," << e.source_id << ","
      << e.snippet_index << "\n";
  if (!f) throw DataError("manifest: short write to " + path);
}

SplitAssignment official_folds(const std::vector<ManifestEntry>& entries, int k) {
  if (k < 1) throw ConfigError("official_folds: k must be positive");
  SplitAssignment out;
  out.num_rounds = k;
  out.test_sets.resize(k);
  for (size_t i = 0; i < entries.size(); ++i) {
    const int fold = entries[i].fold_id;
    if (fold < 1 || fold > k)
      throw DataError("official_folds: fold_id " + std::to_string(fold) + " outside 1.." +
                      std::to_string(k));
    out.test_sets[fold - 1].push_back(static_cast<int>(i));
  }
  for (int r = 0; r < k; ++r)
    if (out.test_sets[r].empty())
      throw DataError("official_folds: fold " + std::to_string(r + 1) + " is empty");
  return out;
}

SplitAssignment stratified_kfold(const std::vector<ManifestEntry>& entries, int k,
                                 uint64_t seed, std::vector<std::string>* warnings) {
  if (k < 2) throw ConfigError("stratified_kfold: k must be at least 2");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < entries.size(); ++i)
    by_class[entries[i].class_label].push_back(static_cast<int>(i));

  SplitAssignment out;
  out.num_rounds = k;
  out.test_sets.resize(k);
  Rng rng(seed);
  for (auto& [label, ids] : by_class) {
    if (static_cast<int>(ids.size()) < k && warnings)
      warnings->push_back("class " + std::to_string(label) + " has only " +
                          std::to_string(ids.size()) + " clips for " + std::to_string(k) +
                          " rounds");
    rng.shuffle(ids);
    for (size_t j = 0; j < ids.size(); ++j)
      out.test_sets[j % k].push_back(ids[j]);
  }
  for (auto& s : out.test_sets) std::sort(s.begin(), s.end());
  return out;
}

LeakageReport audit_split(const std::vector<ManifestEntry>& entries,
                          const SplitAssignment& assignment) {
  const int n = static_cast<int>(entries.size());
  LeakageReport report;
  for (int r = 0; r < assignment.num_rounds; ++r) {
    std::vector<char> in_test(n, 0);
    for (int id : assignment.test_sets[r]) {
      if (id < 0 || id >= n)
        throw DataError("audit_split: round " + std::to_string(r + 1) +
                        " references unknown clip " + std::to_string(id));
      in_test[id] = 1;
    }
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> sides;
    for (int i = 0; i < n; ++i) {
      auto& [train, test] = sides[entries[i].source_id];
      (in_test[i] ? test : train).push_back(i);
    }
    RoundLeakage round;
    round.round = r + 1;
    for (auto& [source, clips] : sides)
      if (!clips.first.empty() && !clips.second.empty())
        round.sources.push_back({source, clips.first, clips.second});
    if (!round.sources.empty()) {
      report.total_leaked += static_cast<int>(round.sources.size());
      report.rounds.push_back(std::move(round));
    }
  }
  return report;
}

std::string report_text(const LeakageReport& report,
                        const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  if (report.clean()) {
    os << "no leakage: every source is confined to one side of each round\n";
    return os.str();
  }
  os << report.total_leaked << " leaked source(s) across " << report.rounds.size()
     << " round(s)\n";
  for (const auto& round : report.rounds) {
    os << "round " << round.round << ":\n";
    for (const auto& s : round.sources) {
      os << "  source " << s.source_id << " spans both sides\n";
      os << "    train:";
      for (int id : s.train_clips) os << " " << entries[id].clip_path;
      os << "\n    test:";
      for (int id : s.test_clips) os << " " << entries[id].clip_path;
      os << "\n";
    }
  }
  return os.str();
}

std::string report_json(const LeakageReport& report,
                        const std::vector<ManifestEntry>& entries) {
  nlohmann::json j;
  j["total_leaked"] = report.total_leaked;
  j["clean"] = report.clean();
  j["rounds"] = nlohmann::json::array();
  for (const auto& round : report.rounds) {
    nlohmann::json r;
    r["round"] = round.round;
    r["sources"] = nlohmann::json::array();
    for (const auto& s : round.sources) {
      nlohmann::json src;
      src["source_id"] = s.source_id;
      for (int id : s.train_clips) src["train"].push_back(entries[id].clip_path);
      for (int id : s.test_clips) src["test"].push_back(entries[id].clip_path);
      r["sources"].push_back(std::move(src));
    }
    j["rounds"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

}  // namespace esres::data
