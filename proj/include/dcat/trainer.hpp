#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcat/cdm.hpp"
#include "dcat/dataset.hpp"
#include "dcat/debias.hpp"
#include "dcat/eval.hpp"
#include "dcat/selector.hpp"
#include "dcat/trace.hpp"
#include "json.hpp"

namespace dcat {

struct TrainConfig {
  int steps = 5;  // T
  int k_steps = 5;
  double lr_inner = 0.1;
  double lr_outer = 0.002;
  double omega = 0.6;
  double mixup_alpha = 0.6;
  Strategy strategy = Strategy::ERM;
  int epochs = 100;
  int batch_size = 64;
  int patience = 5;
  std::uint64_t seed = 0;
  double meta_frac = 0.2;
  double groupdro_eta = 0.01;
  double irm_lambda = 1.0;
  // One outer step per selection step instead of one per episode.
  bool per_step_updates = false;
  bool learned_init = false;
  bool conflicting_only = true;  // Mixup scope, see MixupConfig
  std::size_t policy_hidden = 256;

  // Throws ConfigError.
  void validate() const;
};

enum class EpisodeMode { Train, Eval };

// Returns nullopt when the support set holds fewer than T questions.
std::optional<EpisodeTrace> run_episode(const CdmBundle& bundle, const SelectionPolicy& policy,
                                        const EpisodeSplit& split, Attribute attribute,
                                        const TrainConfig& config, EpisodeMode mode, std::uint64_t epoch);

struct MetaLoss {
  double mean = 0.0;
  std::vector<double> losses;  // one per meta interaction, meta order
};

// Throws ContractError on an empty meta set.
MetaLoss meta_loss(const CdmBundle& bundle, const ProficiencyState& theta_star,
                   std::span<const Interaction> meta);

// Batch mean of the rewards seen by the last update (per step in per-step mode).
struct RewardBaseline {
  std::vector<double> value;
};

// An episode and the loss used as its negative reward. `step_loss` holds a
// single value (whole-episode credit) or one value per selection step.
struct ScoredEpisode {
  const EpisodeTrace* trace = nullptr;
  std::vector<double> step_loss;
};

struct OuterStats {
  double mean_reward = 0.0;
  double grad_norm = 0.0;
};

// REINFORCE step policy += lr * (1/N) sum_e adv_e * grad log pi. Throws
// TrainingError naming the episode whose contribution is not finite.
OuterStats outer_update(SelectionPolicy& policy, std::span<const ScoredEpisode> batch,
                        RewardBaseline& baseline, double lr, std::size_t num_questions);

// Strategy state carried across batches.
struct StrategyState {
  std::array<double, kNumGroups> reweight{};
  std::array<double, kNumGroups> dro_weights{};
  std::vector<int> reweight_empty_groups;
};

StrategyState init_strategy_state(const Corpus& train);

struct EpisodeInput {
  const EpisodeTrace* trace = nullptr;
  const EpisodeSplit* split = nullptr;
};

// L_final per episode for the selection step `step` (0-based). GroupDRO
// weights advance only when `advance_state` is set.
std::vector<double> batch_final_losses(const CdmBundle& bundle, std::span<const EpisodeInput> batch,
                                       std::size_t step, const TrainConfig& config, StrategyState& state,
                                       bool advance_state, std::uint64_t synth_seed);

struct TrainLogRecord {
  int epoch = 0;
  std::string strategy;
  double train_loss = 0.0;
  double valid_worst = 0.0;
  double valid_avg = 0.0;
};

nlohmann::ordered_json log_record_to_json(const TrainLogRecord& r);
// One JSON object per line, keys in record order.
std::string log_to_jsonl(std::span<const TrainLogRecord> log);
// Hash over epochs and numeric fields only, so logs of runs that differ only
// in the strategy label compare equal.
std::uint64_t trajectory_hash(std::span<const TrainLogRecord> log);

struct TrainResult {
  SelectionPolicy policy;  // best validation checkpoint
  SelectionPolicy last_policy;
  std::vector<TrainLogRecord> log;
  int best_epoch = 0;  // 0 = initial policy
  double initial_valid_avg = 0.0;
  double best_valid_avg = 0.0;
  std::size_t skipped_episodes = 0;
};

using EpochCallback =
    std::function<void(const TrainLogRecord&, const SelectionPolicy& last, const SelectionPolicy& best)>;

// `train` and `valid` index into `corpus`. Validation uses IID epoch-0 splits.
TrainResult train(const Corpus& corpus, const std::vector<int>& train_ids, const std::vector<int>& valid_ids,
                  const CdmBundle& bundle, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct EvalResult {
  EvalReport report;
  std::vector<EpisodeTrace> traces;
};

// Greedy episodes of length `steps` per examinee; IID meta from the epoch-0
// resplit, or the label-balanced OOD meta set.
EvalResult evaluate_policy(const Corpus& corpus, const std::vector<int>& examinee_ids, const CdmBundle& bundle,
                           const SelectionPolicy& policy, int steps, bool ood, const TrainConfig& config);

}  // namespace dcat
