#include "dcat/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dcat/common.hpp"
#include "dcat/rng.hpp"
#include "json.hpp"

namespace dcat {
namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(s.substr(start)));
      return out;
    }
    out.push_back(trim(s.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

int round_count(double x) { return static_cast<int>(std::lround(x)); }

}  // namespace

int ExamineeLog::correct() const {
  return static_cast<int>(
      std::count_if(items.begin(), items.end(), [](const Interaction& it) { return it.label == 1; }));
}

CorpusCounts Corpus::counts() const {
  CorpusCounts c;
  c.examinees = logs.size();
  std::vector<char> q_seen(questions.size(), 0);
  std::vector<char> k_seen(static_cast<std::size_t>(std::max(num_concepts, 0)), 0);
  for (const auto& log : logs) {
    c.interactions += log.items.size();
    for (const auto& it : log.items) {
      if (it.question_id >= 0 && static_cast<std::size_t>(it.question_id) < q_seen.size()) {
        q_seen[it.question_id] = 1;
      }
    }
  }
  for (std::size_t q = 0; q < q_seen.size(); ++q) {
    if (!q_seen[q]) continue;
    ++c.questions;
    for (int k : questions[q].concept_ids) {
      if (k >= 0 && k < num_concepts) k_seen[k] = 1;
    }
  }
  c.concepts = static_cast<std::size_t>(std::count(k_seen.begin(), k_seen.end(), 1));
  return c;
}

const ExamineeLog* Corpus::find(int examinee_id) const {
  auto it = std::lower_bound(logs.begin(), logs.end(), examinee_id,
                             [](const ExamineeLog& l, int id) { return l.examinee_id < id; });
  if (it == logs.end() || it->examinee_id != examinee_id) return nullptr;
  return &*it;
}

const ExamineeLog& Corpus::log(int examinee_id) const {
  const auto* l = find(examinee_id);
  if (!l) throw ContractError("unknown examinee id " + std::to_string(examinee_id));
  return *l;
}

void Corpus::validate() const {
  for (std::size_t q = 0; q < questions.size(); ++q) {
    if (questions[q].question_id != static_cast<int>(q)) {
      throw IntegrityError("question table is not dense at index " + std::to_string(q));
    }
    for (int k : questions[q].concept_ids) {
      if (k < 0 || k >= num_concepts) {
        throw IntegrityError("question " + std::to_string(q) + " has concept index " +
                             std::to_string(k) + " outside [0, " + std::to_string(num_concepts) +
                             ")");
      }
    }
  }
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (i > 0 && logs[i - 1].examinee_id >= logs[i].examinee_id) {
      throw IntegrityError("examinee logs are not sorted by id");
    }
    for (const auto& it : logs[i].items) {
      if (it.examinee_id != logs[i].examinee_id) {
        throw IntegrityError("interaction filed under the wrong examinee");
      }
      if (it.question_id < 0 || static_cast<std::size_t>(it.question_id) >= questions.size() ||
          questions[it.question_id].concept_ids.empty()) {
        throw IntegrityError("interaction of examinee " + std::to_string(it.examinee_id) +
                             " references unknown question " + std::to_string(it.question_id));
      }
      if (it.label != 0 && it.label != 1) throw IntegrityError("label outside {0,1}");
    }
  }
}

LoadedCorpus parse_corpus(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++line_no;
  {
    const auto cols = split(line, ',');
    const std::vector<std::string_view> expected{"examinee_id", "question_id", "correct",
                                                 "concept_ids"};
    if (cols != expected) {
      throw ParseError(line_no, "header must be examinee_id,question_id,correct,concept_ids");
    }
  }

  struct RawRow {
    int examinee;
    int question;
    int label;
  };
  std::unordered_map<std::string, int> examinee_index, question_index;
  IndexMap map;
  std::vector<std::set<long long>> question_concepts;
  std::vector<RawRow> rows;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 4) {
      throw ParseError(line_no, "expected 4 fields, got " + std::to_string(cols.size()));
    }
    for (std::size_t c = 0; c < 4; ++c) {
      if (cols[c].empty()) throw ParseError(line_no, "missing value in field " + std::to_string(c + 1));
    }
    int label;
    if (cols[2] == "1") {
      label = 1;
    } else if (cols[2] == "0") {
      label = 0;
    } else {
      throw ParseError(line_no, "correct must be 0 or 1, got '" + std::string(cols[2]) + "'");
    }
    std::set<long long> concepts;
    for (auto tok : split(cols[3], ';')) {
      auto v = parse_int(tok);
      if (!v) throw ParseError(line_no, "bad concept id '" + std::string(tok) + "'");
      if (*v < 1) throw ParseError(line_no, "concept ids start at 1");
      concepts.insert(*v);
    }

    const std::string ekey(cols[0]), qkey(cols[1]);
    auto [eit, e_new] = examinee_index.try_emplace(ekey, static_cast<int>(map.examinees.size()));
    if (e_new) map.examinees.push_back(ekey);
    auto [qit, q_new] = question_index.try_emplace(qkey, static_cast<int>(map.questions.size()));
    if (q_new) {
      map.questions.push_back(qkey);
      question_concepts.push_back(concepts);
    } else if (question_concepts[qit->second] != concepts) {
      throw IntegrityError("line " + std::to_string(line_no) + ": question '" + qkey +
                           "' listed with conflicting concept ids");
    }
    rows.push_back({eit->second, qit->second, label});
  }

  // Concepts are remapped densely in ascending numeric order.
  std::set<long long> all_concepts;
  for (const auto& s : question_concepts) all_concepts.insert(s.begin(), s.end());
  std::map<long long, int> concept_index;
  for (long long k : all_concepts) {
    concept_index.emplace(k, static_cast<int>(concept_index.size()));
    map.concepts.push_back(std::to_string(k));
  }

  LoadedCorpus out;
  Corpus& corpus = out.corpus;
  corpus.num_concepts = static_cast<int>(all_concepts.size());
  corpus.questions.resize(map.questions.size());
  for (std::size_t q = 0; q < corpus.questions.size(); ++q) {
    corpus.questions[q].question_id = static_cast<int>(q);
    for (long long k : question_concepts[q]) {
      corpus.questions[q].concept_ids.push_back(concept_index.at(k));
    }
  }
  corpus.logs.resize(map.examinees.size());
  for (std::size_t e = 0; e < corpus.logs.size(); ++e) corpus.logs[e].examinee_id = static_cast<int>(e);
  std::vector<std::unordered_set<int>> seen(map.examinees.size());
  for (const auto& r : rows) {
    if (!seen[r.examinee].insert(r.question).second) continue;
    corpus.logs[r.examinee].items.push_back({r.examinee, r.question, r.label});
  }
  out.index_map = std::move(map);
  corpus.validate();
  return out;
}

LoadedCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  return parse_corpus(in);
}

void write_index_map(const IndexMap& map, const std::filesystem::path& path) {
  nlohmann::json j;
  j["examinees"] = map.examinees;
  j["questions"] = map.questions;
  j["concepts"] = map.concepts;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Corpus filter_min_interactions(const Corpus& corpus, int min_n) {
  if (min_n < 1) throw ContractError("filter_min_interactions: min_n must be >= 1");
  Corpus out;
  out.questions = corpus.questions;
  out.num_concepts = corpus.num_concepts;
  for (const auto& log : corpus.logs) {
    if (log.size() >= min_n) out.logs.push_back(log);
  }
  return out;
}

ExamineeSplit split_examinees(const Corpus& corpus, std::array<double, 3> ratios,
                              std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  std::vector<int> ids;
  ids.reserve(corpus.logs.size());
  for (const auto& log : corpus.logs) ids.push_back(log.examinee_id);
  Rng rng(stream_seed({seed, static_cast<std::uint64_t>(Stream::ExamineeSplit)}));
  shuffle(ids, rng);

  const int n = static_cast<int>(ids.size());
  const int n_train = std::min(n, round_count(ratios[0] * n));
  const int n_valid = std::min(n - n_train, round_count(ratios[1] * n));
  ExamineeSplit s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.valid.assign(ids.begin() + n_train, ids.begin() + n_train + n_valid);
  s.test.assign(ids.begin() + n_train + n_valid, ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.valid.begin(), s.valid.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Corpus subset(const Corpus& corpus, const std::vector<int>& examinee_ids) {
  Corpus out;
  out.questions = corpus.questions;
  out.num_concepts = corpus.num_concepts;
  std::vector<int> ids = examinee_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int id : ids) out.logs.push_back(corpus.log(id));
  return out;
}

EpisodeSplit resplit_support_meta(const ExamineeLog& log, double meta_frac, std::uint64_t seed,
                                  std::uint64_t epoch) {
  if (log.items.empty()) throw ContractError("resplit_support_meta: empty log");
  EpisodeSplit split;
  split.examinee_id = log.examinee_id;
  const int n = log.size();
  if (n == 1) {
    split.support = log.items;
    split.usable = false;
    return split;
  }
  int m = std::max(1, round_count(meta_frac * n));
  m = std::min(m, n - 1);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream_seed({seed, static_cast<std::uint64_t>(Stream::SupportMeta), epoch,
                       static_cast<std::uint64_t>(log.examinee_id)}));
  shuffle(order, rng);
  std::vector<char> in_meta(n, 0);
  for (int i = 0; i < m; ++i) in_meta[order[i]] = 1;
  for (int i = 0; i < n; ++i) {
    (in_meta[i] ? split.meta : split.support).push_back(log.items[i]);
  }
  return split;
}

int ood_pairs(int n, double meta_frac) { return std::max(1, round_count(meta_frac * n / 2.0)); }

std::optional<EpisodeSplit> build_ood_meta(const ExamineeLog& log, double meta_frac,
                                           std::uint64_t seed) {
  if (log.items.empty()) throw ContractError("build_ood_meta: empty log");
  const int n = log.size();
  const int m = ood_pairs(n, meta_frac);
  std::vector<int> correct, incorrect;
  for (int i = 0; i < n; ++i) (log.items[i].label ? correct : incorrect).push_back(i);
  if (static_cast<int>(std::min(correct.size(), incorrect.size())) < m) return std::nullopt;

  Rng rng(stream_seed({seed, static_cast<std::uint64_t>(Stream::OodMeta),
                       static_cast<std::uint64_t>(log.examinee_id)}));
  shuffle(correct, rng);
  shuffle(incorrect, rng);
  std::vector<char> in_meta(n, 0);
  for (int i = 0; i < m; ++i) {
    in_meta[correct[i]] = 1;
    in_meta[incorrect[i]] = 1;
  }
  EpisodeSplit split;
  split.examinee_id = log.examinee_id;
  for (int i = 0; i < n; ++i) (in_meta[i] ? split.meta : split.support).push_back(log.items[i]);
  return split;
}

Attribute attribute_from_ratio(double ratio) {
  if (ratio <= 0.4) return Attribute::A;
  if (ratio <= 0.6) return Attribute::B;
  return Attribute::C;
}

Attribute attribute_from_counts(int correct, int total) {
  if (total <= 0) throw ContractError("attribute of an empty log is undefined");
  // correct/total <= 2/5 and <= 3/5 without rounding
  if (5 * static_cast<long long>(correct) <= 2 * static_cast<long long>(total)) return Attribute::A;
  if (5 * static_cast<long long>(correct) <= 3 * static_cast<long long>(total)) return Attribute::B;
  return Attribute::C;
}

Attribute attribute_of(const ExamineeLog& log) { return attribute_from_counts(log.correct(), log.size()); }

char attribute_char(Attribute a) { return "ABC"[static_cast<int>(a)]; }

Attribute parse_attribute(char c) {
  switch (c) {
    case 'A':
      return Attribute::A;
    case 'B':
      return Attribute::B;
    case 'C':
      return Attribute::C;
  }
  throw ContractError(std::string("unknown attribute '") + c + "'");
}

GroupKey GroupKey::from_index(int index) {
  if (index < 0 || index >= kNumGroups) throw ContractError("group index out of range");
  return {static_cast<Attribute>(index / 2), index % 2};
}

BiasKind GroupKey::bias() const {
  switch (attribute) {
    case Attribute::B:
      return BiasKind::Unbiased;
    case Attribute::A:
      return label == 0 ? BiasKind::Aligned : BiasKind::Conflicting;
    case Attribute::C:
      return label == 1 ? BiasKind::Aligned : BiasKind::Conflicting;
  }
  return BiasKind::Unbiased;
}

std::string GroupKey::name() const { return std::string(1, attribute_char(attribute)) + std::to_string(label); }

GroupKey group_key(Attribute attribute, int label) {
  if (label != 0 && label != 1) throw ContractError("group label must be 0 or 1");
  return {attribute, label};
}

}  // namespace dcat
