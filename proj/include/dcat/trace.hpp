#pragma once

#include <vector>

#include "dcat/cdm.hpp"
#include "dcat/dataset.hpp"

namespace dcat {

struct SelectedStep {
  int question_id = 0;
  int label = 0;
  double log_prob = 0.0;
};

// One rollout of T selections for one examinee.
struct EpisodeTrace {
  int examinee_id = 0;
  Attribute attribute = Attribute::B;
  std::vector<int> support_questions;
  std::vector<SelectedStep> selected;
  std::vector<ProficiencyState> theta_star;  // after each step's inner update
  std::vector<double> meta_loss;             // with theta_star of the same step
  bool inner_warning = false;

  std::vector<Response> history(std::size_t steps) const;
  int correct_selected() const;
};

}  // namespace dcat
