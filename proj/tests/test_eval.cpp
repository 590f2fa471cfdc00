#include <algorithm>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "dcat/eval.hpp"
#include "dcat/rng.hpp"

using namespace dcat;

namespace {

std::vector<Prediction> random_predictions(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Prediction> p;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<Attribute>(rng.index(3));
    const int y = static_cast<int>(rng.index(2));
    p.push_back({group_key(a, y), static_cast<int>(rng.index(2)), y});
  }
  return p;
}

}  // namespace

TEST_CASE("classification threshold") {
  CHECK(classify(0.5) == 1);
  CHECK(classify(0.49) == 0);
  CHECK(classify(0.51) == 1);
}

TEST_CASE("group accuracies") {
  std::vector<Prediction> all_right;
  for (int k = 0; k < kNumGroups; k += 2) {
    const auto g = GroupKey::from_index(k);
    all_right.push_back({g, g.label, g.label});
  }
  const auto m = group_accuracies(all_right);
  for (const auto& g : m.groups)
    if (!g.empty()) CHECK(g.accuracy == 1.0);

  const auto p = random_predictions(500, 3);
  const auto gm = group_accuracies(p);
  std::array<std::size_t, kNumGroups> n{}, c{};
  for (const auto& x : p) {
    ++n[x.group.index()];
    c[x.group.index()] += x.predicted == x.label;
  }
  for (int k = 0; k < kNumGroups; ++k) {
    CHECK(gm.groups[k].count == n[k]);
    CHECK(gm.groups[k].correct == c[k]);
  }
  CHECK(gm.total() == 500);
}

TEST_CASE("worst and average") {
  std::vector<Prediction> p;
  auto add = [&](int group, int right, int total) {
    const auto g = GroupKey::from_index(group);
    for (int i = 0; i < total; ++i) p.push_back({g, i < right ? g.label : 1 - g.label, g.label});
  };
  add(0, 9, 10);
  add(3, 3, 10);
  add(5, 6, 10);
  auto r = report(p, 5, false);
  CHECK(r.worst == doctest::Approx(0.3));
  CHECK(r.avg == doctest::Approx(0.6));

  p.clear();
  add(2, 7, 11);
  r = report(p, 5, false);
  CHECK(r.worst == r.avg);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto q = random_predictions(37 + s * 13, s);
    const auto rr = report(q, 10, true);
    double weighted = 0.0;
    std::size_t total = 0;
    for (const auto& g : rr.groups.groups) {
      weighted += g.accuracy * static_cast<double>(g.count);
      total += g.count;
    }
    CHECK(total == q.size());
    CHECK(std::abs(rr.avg - weighted / static_cast<double>(total)) <= 1e-12);
    CHECK(rr.worst <= rr.avg);
  }
}

TEST_CASE("summary formatting") {
  EvalReport r;
  r.steps = 5;
  r.worst = 0.3824;
  r.avg = 0.6118;
  CHECK(format_summary(r) == "Metrics@5 (IID) Worst 0.3824 Avg. 0.6118");
  const auto back = report_from_json(report_to_json(r));
  CHECK(back.worst == r.worst);
  CHECK(back.steps == 5);
}

TEST_CASE("ratio distribution") {
  CHECK(ratio_bin(0.6) == 12);
  CHECK(ratio_bin(1.0) == kRatioBins - 1);
  CHECK(ratio_bin(0.0) == 0);

  EpisodeTrace t;
  t.attribute = Attribute::B;
  for (int i = 0; i < 10; ++i) t.selected.push_back({i, i < 6 ? 1 : 0, 0.0});
  const std::vector<EpisodeTrace> one{t};
  CHECK(selected_ratio_distribution(one).records[0].ratio == doctest::Approx(0.6));

  Rng rng(4);
  std::vector<RatioRecord> recs;
  std::array<std::size_t, 3> n{};
  for (int i = 0; i < 200; ++i) {
    const auto a = static_cast<Attribute>(rng.index(3));
    ++n[static_cast<int>(a)];
    recs.push_back({i, a, static_cast<double>(rng.index(11)) / 10.0});
  }
  const auto d = ratio_distribution(recs);
  for (int a = 0; a < 3; ++a) {
    std::size_t s = 0;
    for (auto c : d.histogram[a]) s += c;
    CHECK(s == n[a]);
  }
  const auto csv = ratios_csv(d.records);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 201);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "examinee_id,attribute,ratio");
  while (std::getline(in, line)) {
    const char a = line[line.find(',') + 1];
    CHECK((a == 'A' || a == 'B' || a == 'C'));
  }
}
