#pragma once

// Two-question pool where question 0 always scores the lower loss. The
// policy is trained with the library's REINFORCE step on one-step episodes.

#include <cstdint>
#include <vector>

#include "dcat/rng.hpp"
#include "dcat/selector.hpp"
#include "dcat/trace.hpp"
#include "dcat/trainer.hpp"

namespace dcat::testing {

struct ToyPoolParams {
  int updates = 200;
  int batch = 8;
  double lr = 1.0;
  double good_loss = 0.3;
  double bad_loss = 0.7;
  std::size_t hidden = 16;
};

inline double toy_prob_first(const SelectionPolicy& p) {
  const SelectionMask both{{1, 1}};
  return masked_softmax(policy_logits(p, encode_state({}, 2), both), both)[0];
}

// Probability of question 0 after each update; entry 0 is the initial value.
inline std::vector<double> run_toy_pool(std::uint64_t seed, const ToyPoolParams& tp = {}) {
  auto policy = SelectionPolicy::create(2, tp.hidden, seed);
  const SelectionMask both{{1, 1}};
  Rng rng(seed);
  RewardBaseline baseline;
  std::vector<double> probs{toy_prob_first(policy)};
  for (int u = 0; u < tp.updates; ++u) {
    std::vector<EpisodeTrace> traces(tp.batch);
    std::vector<ScoredEpisode> scored(tp.batch);
    for (int e = 0; e < tp.batch; ++e) {
      const int q = select_question(policy, encode_state({}, 2), both, SelectMode::Sample, rng);
      auto& tr = traces[e];
      tr.examinee_id = e;
      tr.support_questions = {0, 1};
      tr.selected = {{q, 1, 0.0}};
      scored[e] = {&tr, {q == 0 ? tp.good_loss : tp.bad_loss}};
    }
    outer_update(policy, scored, baseline, tp.lr, 2);
    probs.push_back(toy_prob_first(policy));
  }
  return probs;
}

}  // namespace dcat::testing
