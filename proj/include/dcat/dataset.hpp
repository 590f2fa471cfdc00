#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dcat {

struct Interaction {
  int examinee_id = 0;
  int question_id = 0;
  int label = 0;  // 1 = correct

  bool operator==(const Interaction&) const = default;
};

struct QuestionMeta {
  int question_id = 0;
  std::vector<int> concept_ids;  // sorted, distinct, each < Corpus::num_concepts
};

struct ExamineeLog {
  int examinee_id = 0;
  std::vector<Interaction> items;  // file order

  int correct() const;
  int size() const { return static_cast<int>(items.size()); }
};

struct CorpusCounts {
  std::size_t examinees = 0;
  std::size_t questions = 0;
  std::size_t concepts = 0;
  std::size_t interactions = 0;

  bool operator==(const CorpusCounts&) const = default;
};

// Dense 0-based id tables. `logs` is sorted by examinee_id; `questions` is
// indexed by question_id and always covers the full question table, even
// after examinees are filtered out.
struct Corpus {
  std::vector<ExamineeLog> logs;
  std::vector<QuestionMeta> questions;
  int num_concepts = 0;

  // Counts over what the retained logs reference (questions and concepts
  // that no retained interaction touches are not counted).
  CorpusCounts counts() const;
  const ExamineeLog* find(int examinee_id) const;
  const ExamineeLog& log(int examinee_id) const;
  std::size_t num_questions() const { return questions.size(); }
  // Throws IntegrityError when an interaction references a question with no metadata.
  void validate() const;
};

// Original id strings for every dense index, written as index_map.json.
struct IndexMap {
  std::vector<std::string> examinees;
  std::vector<std::string> questions;
  std::vector<std::string> concepts;
};

struct LoadedCorpus {
  Corpus corpus;
  IndexMap index_map;
};

// CSV with header `examinee_id,question_id,correct,concept_ids`; concept_ids
// is a `;`-separated integer list. Duplicate (examinee, question) pairs keep
// the first occurrence.
LoadedCorpus load_corpus(const std::filesystem::path& path);
LoadedCorpus parse_corpus(std::istream& in);
void write_index_map(const IndexMap& map, const std::filesystem::path& path);

Corpus filter_min_interactions(const Corpus& corpus, int min_n);

struct ExamineeSplit {
  std::vector<int> train;
  std::vector<int> valid;
  std::vector<int> test;
};

// Sizes are round(r_train * n), round(r_valid * n), and the remainder; each
// list is sorted by examinee id.
ExamineeSplit split_examinees(const Corpus& corpus, std::array<double, 3> ratios,
                              std::uint64_t seed);

// Restrict a corpus to a subset of examinee ids (the question table is kept).
Corpus subset(const Corpus& corpus, const std::vector<int>& examinee_ids);

struct EpisodeSplit {
  int examinee_id = 0;
  std::vector<Interaction> support;
  std::vector<Interaction> meta;
  // False when the log had a single interaction and meta is empty.
  bool usable = true;
};

// Fresh support/meta partition per (seed, epoch, examinee); both halves keep log order.
EpisodeSplit resplit_support_meta(const ExamineeLog& log, double meta_frac, std::uint64_t seed,
                                  std::uint64_t epoch);

// Number of correct/incorrect pairs placed in an OOD meta set.
int ood_pairs(int n, double meta_frac);

// Label-balanced meta set of ood_pairs() correct + incorrect interactions, or
// nullopt when the examinee cannot supply that many of either label.
std::optional<EpisodeSplit> build_ood_meta(const ExamineeLog& log, double meta_frac,
                                           std::uint64_t seed);

enum class Attribute { A = 0, B = 1, C = 2 };

// [0, 0.4] -> A, (0.4, 0.6] -> B, (0.6, 1] -> C
Attribute attribute_from_ratio(double ratio);
// Same thresholds in exact integer arithmetic over the full log.
Attribute attribute_of(const ExamineeLog& log);
Attribute attribute_from_counts(int correct, int total);
char attribute_char(Attribute a);
Attribute parse_attribute(char c);

enum class BiasKind { Aligned, Conflicting, Unbiased };

struct GroupKey {
  Attribute attribute = Attribute::A;
  int label = 0;

  // 0..5 in (A,0), (A,1), (B,0), (B,1), (C,0), (C,1) order.
  int index() const { return static_cast<int>(attribute) * 2 + label; }
  static GroupKey from_index(int index);
  BiasKind bias() const;
  std::string name() const;  // e.g. "A1"
  bool operator==(const GroupKey&) const = default;
};

inline constexpr int kNumGroups = 6;

GroupKey group_key(Attribute attribute, int label);

}  // namespace dcat
