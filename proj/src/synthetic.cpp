#include "dcat/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "dcat/common.hpp"
#include "dcat/rng.hpp"

namespace dcat {

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.examinees < 1 || spec.questions < 1 || spec.concepts < 1 ||
      spec.per_examinee < 1 || spec.per_examinee > spec.questions) {
    throw ConfigError("synthetic corpus: inconsistent sizes");
  }
  Rng rng(stream_seed({spec.seed, static_cast<std::uint64_t>(Stream::Synthetic)}));
  SyntheticCorpus out;
  Corpus& c = out.corpus;
  c.num_concepts = spec.concepts;
  c.questions.resize(spec.questions);
  out.difficulty.resize(spec.questions);
  for (int q = 0; q < spec.questions; ++q) {
    c.questions[q].question_id = q;
    const int first = static_cast<int>(rng.index(spec.concepts));
    c.questions[q].concept_ids.push_back(first);
    if (spec.concepts > 1 && rng.uniform() < 0.3) {
      int second = static_cast<int>(rng.index(spec.concepts - 1));
      if (second >= first) ++second;
      c.questions[q].concept_ids.push_back(second);
      std::sort(c.questions[q].concept_ids.begin(), c.questions[q].concept_ids.end());
    }
    out.difficulty[q] = spec.difficulty_sd * rng.normal();
  }

  const double bands[3] = {spec.ability_low, spec.ability_mid, spec.ability_high};
  std::vector<int> pool(spec.questions);
  std::iota(pool.begin(), pool.end(), 0);
  c.logs.resize(spec.examinees);
  out.ability.resize(spec.examinees);
  for (int e = 0; e < spec.examinees; ++e) {
    const double a = bands[e % 3] + spec.ability_sd * rng.normal();
    out.ability[e] = a;
    // partial Fisher-Yates picks per_examinee distinct questions
    for (int i = 0; i < spec.per_examinee; ++i) {
      const std::size_t j = i + rng.index(spec.questions - i);
      std::swap(pool[i], pool[j]);
    }
    auto& log = c.logs[e];
    log.examinee_id = e;
    for (int i = 0; i < spec.per_examinee; ++i) {
      const int q = pool[i];
      const double p = sigmoid(spec.scale * (a - out.difficulty[q]));
      log.items.push_back({e, q, rng.uniform() < p ? 1 : 0});
    }
  }
  c.validate();
  return out;
}

void write_corpus_csv(const Corpus& corpus, std::ostream& out) {
  out << "examinee_id,question_id,correct,concept_ids\n";
  for (const auto& log : corpus.logs) {
    for (const auto& it : log.items) {
      out << it.examinee_id << ',' << it.question_id << ',' << it.label << ',';
      const auto& ks = corpus.questions[it.question_id].concept_ids;
      for (std::size_t i = 0; i < ks.size(); ++i) out << (i ? ";" : "") << ks[i] + 1;
      out << '\n';
    }
  }
}

}  // namespace dcat
