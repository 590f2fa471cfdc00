#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dcat/dataset.hpp"

namespace dcat {

// Ground-truth 1PL generator used for smoke corpora and the directional
// experiments. Examinees cycle through three ability bands (low, middle,
// high) so that the A/B/C attributes are all populated and A/C logs are
// skewed toward their dominant label.
struct SyntheticSpec {
  int examinees = 300;
  int questions = 100;
  int concepts = 5;
  int per_examinee = 50;
  double ability_low = -1.4;
  double ability_mid = 0.0;
  double ability_high = 1.4;
  double ability_sd = 0.25;
  double difficulty_sd = 1.0;
  double scale = 1.7;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<double> ability;     // per examinee
  std::vector<double> difficulty;  // per question
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Writes the corpus in the CSV interchange format (concept ids 1-based).
void write_corpus_csv(const Corpus& corpus, std::ostream& out);

}  // namespace dcat
