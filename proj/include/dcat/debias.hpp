#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcat/cdm.hpp"
#include "dcat/dataset.hpp"
#include "dcat/rng.hpp"

namespace dcat {

enum class Strategy { ERM, IRM, GroupDRO, Reweight, MixupB, MixupSelf, MixupInner };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
bool is_mixup(Strategy s);

// L2 distance between sigmoid-space proficiency vectors.
double similarity(std::span<const double> theta_i, std::span<const double> theta_j);

// One examinee of the current batch as seen by retrieval and synthesis.
struct BatchMember {
  int examinee_id = 0;
  Attribute attribute = Attribute::B;
  std::vector<double> theta;            // theta* after the final inner update
  const std::vector<Interaction>* meta = nullptr;
};

// Candidate ids ordered by ascending distance to `theta`, ties by lower id.
std::vector<int> rank_partners(std::span<const double> theta, std::span<const BatchMember> pool);
std::optional<int> retrieve_partner(std::span<const double> theta, std::span<const BatchMember> pool);

// Uniform draw among the first ranked partner's meta interactions with label
// `label`, falling through the ranking when a partner has none.
std::optional<Interaction> draw_partner_interaction(std::span<const int> ranked_partners,
                                                    std::span<const BatchMember> pool, int label, Rng& rng);

// lambda * q_i + (1 - lambda) * q_j, componentwise over the interpolated parameters.
ItemParams mixup_item(const ItemParams& q_i, const ItemParams& q_j, double lambda);

struct SyntheticSample {
  int examinee_id = 0;  // owner of q_i; theta* of this examinee scores the sample
  ItemParams item;
  int label = 0;
  Interaction source_i;
  Interaction source_j;
  double lambda = 1.0;
};

struct MixupConfig {
  double alpha = 0.6;
  // Augment only bias-conflicting meta interactions of A/C examinees (A with
  // label 1, C with label 0); false augments every A/C meta interaction.
  bool conflicting_only = true;
};

struct SynthesisStats {
  std::size_t eligible = 0;
  std::size_t skipped = 0;
  bool empty_b_pool = false;
};

// Synthetic set for one batch. `rng_seed` is expanded into a private stream
// per examinee so the output does not depend on batch iteration order.
std::vector<SyntheticSample> synthesize(Strategy strategy, const CdmBundle& bundle,
                                        std::span<const BatchMember> batch, const MixupConfig& config,
                                        std::uint64_t rng_seed, SynthesisStats* stats = nullptr);

// Summed loss of one examinee's synthetic samples scored with its theta*.
double examinee_synthetic_loss(const CdmBundle& bundle, std::span<const double> theta,
                               std::span<const SyntheticSample> samples);

// (1/N) * sum over examinees of their summed synthetic losses; empty set -> 0.
double synthetic_loss(const CdmBundle& bundle, std::span<const BatchMember> batch,
                      std::span<const SyntheticSample> synth);

double final_loss(double emp, double syn, double omega);

// Output logit and label of one meta prediction, grouped by environment for IRM.
struct EnvPrediction {
  double logit = 0.0;
  int label = 0;
};

// d/ds of the mean BCE of sigmoid(s * logit) at s = 1.
double irm_env_gradient(std::span<const EnvPrediction> env);
// Sum over environments of the squared dummy-scale gradient; < 2 nonempty environments -> 0.
double irm_penalty(std::span<const std::vector<EnvPrediction>> envs);

struct GroupDroResult {
  double loss = 0.0;
  std::array<double, kNumGroups> weights{};
};

// Exponentiated-gradient step on the group weights, then the weighted loss.
// Groups with present[k] == false keep their weight before renormalization.
GroupDroResult groupdro_step(const std::array<double, kNumGroups>& group_losses,
                             const std::array<bool, kNumGroups>& present,
                             const std::array<double, kNumGroups>& weights, double eta);

struct ReweightResult {
  std::array<double, kNumGroups> weights{};
  std::vector<int> empty_groups;
};

// Inverse-frequency weights N_total / (6 N_k); empty groups get 0.
ReweightResult reweight_weights(const std::array<std::size_t, kNumGroups>& counts);

}  // namespace dcat
