#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcat/dataset.hpp"
#include "dcat/trace.hpp"
#include "json.hpp"

namespace dcat {

// p >= 0.5 is a predicted correct response.
int classify(double p);

struct Prediction {
  GroupKey group;
  int predicted = 0;
  int label = 0;
};

struct GroupStat {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // meaningful only when count > 0
  bool empty() const { return count == 0; }
};

struct GroupMetrics {
  std::array<GroupStat, kNumGroups> groups{};

  std::size_t total() const;
  std::size_t total_correct() const;
};

GroupMetrics group_accuracies(std::span<const Prediction> predictions);

// Per evaluated examinee: correct ratio among the selected questions and in the meta set.
struct ExamineeRecord {
  int examinee_id = 0;
  Attribute attribute = Attribute::B;
  double selected_ratio = 0.0;
  double meta_ratio = 0.0;
};

struct EvalReport {
  int steps = 0;  // T
  bool ood = false;
  double worst = 0.0;
  double avg = 0.0;
  GroupMetrics groups;
  std::vector<ExamineeRecord> examinees;
  std::size_t excluded = 0;

  std::string label() const { return "Metrics@" + std::to_string(steps); }
};

// avg over all predictions; worst over nonempty groups (0 when there are none).
EvalReport report(std::span<const Prediction> predictions, int steps, bool ood);

// "Metrics@5 (IID) Worst 0.3824 Avg. 0.6118"
std::string format_summary(const EvalReport& r);

inline constexpr int kRatioBins = 20;

struct RatioRecord {
  int examinee_id = 0;
  Attribute attribute = Attribute::B;
  double ratio = 0.0;
};

struct RatioDistribution {
  std::vector<RatioRecord> records;
  std::array<std::array<std::size_t, kRatioBins>, 3> histogram{};  // per attribute, 20 bins on [0, 1]
};

int ratio_bin(double ratio);
RatioDistribution ratio_distribution(std::vector<RatioRecord> records);
// Correct ratio among each trace's selected questions.
RatioDistribution selected_ratio_distribution(std::span<const EpisodeTrace> traces);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

std::string groups_csv(const EvalReport& r);
std::string ratios_csv(std::span<const RatioRecord> records);
std::string histogram_csv(const RatioDistribution& d);

// report.json, groups.csv, selected_ratios.csv and meta_ratios.csv.
void write_report_files(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace dcat
