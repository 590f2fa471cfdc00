#include "dcat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dcat/common.hpp"
#include "dcat/io.hpp"

namespace dcat {

std::vector<Response> EpisodeTrace::history(std::size_t steps) const {
  std::vector<Response> h;
  for (std::size_t t = 0; t < steps && t < selected.size(); ++t) h.push_back({selected[t].question_id, selected[t].label});
  return h;
}

int EpisodeTrace::correct_selected() const {
  return static_cast<int>(std::count_if(selected.begin(), selected.end(), [](const SelectedStep& s) { return s.label == 1; }));
}

int classify(double p) { return p >= 0.5 ? 1 : 0; }

std::size_t GroupMetrics::total() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.count;
  return n;
}

std::size_t GroupMetrics::total_correct() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.correct;
  return n;
}

GroupMetrics group_accuracies(std::span<const Prediction> predictions) {
  GroupMetrics m;
  for (const auto& p : predictions) {
    auto& g = m.groups[p.group.index()];
    ++g.count;
    g.correct += p.predicted == p.label;
  }
  for (auto& g : m.groups) {
    g.accuracy = g.count ? static_cast<double>(g.correct) / static_cast<double>(g.count) : 0.0;
  }
  return m;
}

EvalReport report(std::span<const Prediction> predictions, int steps, bool ood) {
  EvalReport r;
  r.steps = steps;
  r.ood = ood;
  r.groups = group_accuracies(predictions);
  const std::size_t total = r.groups.total();
  r.avg = total ? static_cast<double>(r.groups.total_correct()) / static_cast<double>(total) : 0.0;
  bool any = false;
  for (const auto& g : r.groups.groups) {
    if (g.empty()) continue;
    r.worst = any ? std::min(r.worst, g.accuracy) : g.accuracy;
    any = true;
  }
  return r;
}

std::string format_summary(const EvalReport& r) {
  return r.label() + (r.ood ? " (OOD)" : " (IID)") + " Worst " + fixed(r.worst, 4) + " Avg. " + fixed(r.avg, 4);
}

int ratio_bin(double ratio) {
  const int b = static_cast<int>(std::floor(ratio * kRatioBins));
  return std::clamp(b, 0, kRatioBins - 1);
}

RatioDistribution ratio_distribution(std::vector<RatioRecord> records) {
  RatioDistribution d;
  d.records = std::move(records);
  for (const auto& r : d.records) ++d.histogram[static_cast<int>(r.attribute)][ratio_bin(r.ratio)];
  return d;
}

RatioDistribution selected_ratio_distribution(std::span<const EpisodeTrace> traces) {
  std::vector<RatioRecord> records;
  for (const auto& t : traces) {
    if (t.selected.empty()) continue;
    records.push_back({t.examinee_id, t.attribute,
                       static_cast<double>(t.correct_selected()) / static_cast<double>(t.selected.size())});
  }
  return ratio_distribution(std::move(records));
}

namespace {

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json groups = json::array();
  for (int k = 0; k < kNumGroups; ++k) {
    const auto& g = r.groups.groups[k];
    groups.push_back({{"group", GroupKey::from_index(k).name()},
                      {"count", g.count},
                      {"correct", g.correct},
                      {"accuracy", g.empty() ? json(nullptr) : json(round6(g.accuracy))}});
  }
  json examinees = json::array();
  for (const auto& e : r.examinees) {
    examinees.push_back({{"examinee_id", e.examinee_id},
                         {"attribute", std::string(1, attribute_char(e.attribute))},
                         {"selected_ratio", round6(e.selected_ratio)},
                         {"meta_ratio", round6(e.meta_ratio)}});
  }
  return {{"label", r.label()}, {"T", r.steps},       {"ood", r.ood},
          {"worst", round6(r.worst)}, {"avg", round6(r.avg)}, {"excluded", r.excluded},
          {"groups", groups}, {"examinees", examinees}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.steps = j.at("T").get<int>();
  r.ood = j.at("ood").get<bool>();
  r.worst = j.at("worst").get<double>();
  r.avg = j.at("avg").get<double>();
  r.excluded = j.value("excluded", std::size_t{0});
  const auto& groups = j.at("groups");
  for (int k = 0; k < kNumGroups && k < static_cast<int>(groups.size()); ++k) {
    auto& g = r.groups.groups[k];
    g.count = groups[k].at("count").get<std::size_t>();
    g.correct = groups[k].at("correct").get<std::size_t>();
    g.accuracy = g.count ? static_cast<double>(g.correct) / static_cast<double>(g.count) : 0.0;
  }
  for (const auto& e : j.at("examinees")) {
    r.examinees.push_back({e.at("examinee_id").get<int>(), parse_attribute(e.at("attribute").get<std::string>().at(0)),
                           e.at("selected_ratio").get<double>(), e.at("meta_ratio").get<double>()});
  }
  return r;
}

std::string groups_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "group,count,accuracy\n";
  for (int k = 0; k < kNumGroups; ++k) {
    const auto& g = r.groups.groups[k];
    out << GroupKey::from_index(k).name() << ',' << g.count << ',' << (g.empty() ? "" : fixed(g.accuracy, 6)) << '\n';
  }
  return out.str();
}

std::string ratios_csv(std::span<const RatioRecord> records) {
  std::ostringstream out;
  out << "examinee_id,attribute,ratio\n";
  for (const auto& r : records) out << r.examinee_id << ',' << attribute_char(r.attribute) << ',' << fixed(r.ratio, 6) << '\n';
  return out.str();
}

std::string histogram_csv(const RatioDistribution& d) {
  std::ostringstream out;
  out << "attribute,bin_low,bin_high,count\n";
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < kRatioBins; ++b) {
      out << attribute_char(static_cast<Attribute>(a)) << ',' << fixed(static_cast<double>(b) / kRatioBins, 6) << ','
          << fixed(static_cast<double>(b + 1) / kRatioBins, 6) << ',' << d.histogram[a][b] << '\n';
    }
  }
  return out.str();
}

void write_report_files(const EvalReport& r, const std::filesystem::path& dir) {
  std::vector<RatioRecord> selected, meta;
  for (const auto& e : r.examinees) {
    selected.push_back({e.examinee_id, e.attribute, e.selected_ratio});
    meta.push_back({e.examinee_id, e.attribute, e.meta_ratio});
  }
  write_file_atomic(dir / "report.json", report_to_json(r).dump(1) + "\n");
  write_file_atomic(dir / "groups.csv", groups_csv(r));
  write_file_atomic(dir / "selected_ratios.csv", ratios_csv(selected));
  write_file_atomic(dir / "meta_ratios.csv", ratios_csv(meta));
}

}  // namespace dcat
