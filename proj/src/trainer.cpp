#include "dcat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>

#include "dcat/common.hpp"
#include "dcat/io.hpp"
#include "dcat/rng.hpp"

namespace dcat {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (steps < 1) fail("T must be >= 1");
  if (k_steps < 1) fail("k_steps must be >= 1");
  if (!(lr_inner > 0.0)) fail("lr_inner must be positive");
  if (!(lr_outer > 0.0)) fail("lr_outer must be positive");
  if (!(omega >= 0.0)) fail("omega must be >= 0");
  if (!(mixup_alpha > 0.0)) fail("mixup_alpha must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (!(meta_frac > 0.0 && meta_frac < 1.0)) fail("meta_frac must lie in (0, 1)");
  if (!(groupdro_eta >= 0.0)) fail("groupdro_eta must be >= 0");
  if (!(irm_lambda >= 0.0)) fail("irm_lambda must be >= 0");
  if (policy_hidden < 1) fail("policy_hidden must be >= 1");
}

namespace {

std::uint64_t u64(Stream s) { return static_cast<std::uint64_t>(s); }

double masked_log_softmax(std::span<const double> logits, const SelectionMask& mask, int q) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.allowed[i]) mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.allowed[i]) z += std::exp(logits[i] - mx);
  }
  return logits[q] - mx - std::log(z);
}

SelectionMask mask_of(std::span<const int> questions, std::size_t num_questions) {
  SelectionMask m;
  m.allowed.assign(num_questions, 0);
  for (int q : questions) m.allowed.at(q) = 1;
  return m;
}

double batch_mean(std::span<const double> v) {
  // r0 + mean of offsets: identical values give exactly r0.
  const double r0 = v[0];
  double acc = 0.0;
  for (double x : v) acc += x - r0;
  return r0 + acc / static_cast<double>(v.size());
}

bool all_finite(const SelectionPolicy& p) {
  bool ok = true;
  p.for_each_array([&](const std::vector<double>& a) {
    for (double x : a) ok = ok && std::isfinite(x);
  });
  return ok;
}

}  // namespace

std::optional<EpisodeTrace> run_episode(const CdmBundle& bundle, const SelectionPolicy& policy,
                                        const EpisodeSplit& split, Attribute attribute,
                                        const TrainConfig& config, EpisodeMode mode, std::uint64_t epoch) {
  const std::size_t steps = static_cast<std::size_t>(config.steps);
  if (split.support.size() < steps) return std::nullopt;
  const std::size_t nq = policy.num_questions;

  EpisodeTrace tr;
  tr.examinee_id = split.examinee_id;
  tr.attribute = attribute;
  for (const auto& it : split.support) tr.support_questions.push_back(it.question_id);
  std::vector<int> label_of(nq, -1);
  for (const auto& it : split.support) label_of.at(it.question_id) = it.label;

  SelectionMask mask = SelectionMask::from_support(split.support, nq);
  ProficiencyState theta = bundle.initial_state(config.learned_init);
  std::vector<Response> history;
  const SelectMode select = mode == EpisodeMode::Train ? SelectMode::Sample : SelectMode::Greedy;

  for (std::size_t t = 0; t < steps; ++t) {
    const auto state = encode_state(history, nq);
    const auto logits = raw_logits(policy, state);
    Rng rng(stream_seed({config.seed, u64(Stream::Selection), epoch,
                         static_cast<std::uint64_t>(split.examinee_id), t}));
    const int q = select_from_logits(logits, mask, select, rng);
    const double lp = masked_log_softmax(logits, mask, q);
    mask.administer(q);
    history.push_back({q, label_of[q]});
    tr.selected.push_back({q, label_of[q], lp});

    theta = inner_optimize(bundle, theta, history, config.k_steps, config.lr_inner).state;
    for (double r : theta.raw) tr.inner_warning = tr.inner_warning || !std::isfinite(r);
    tr.theta_star.push_back(theta);
    if (!split.meta.empty()) tr.meta_loss.push_back(meta_loss(bundle, theta, split.meta).mean);
  }
  return tr;
}

MetaLoss meta_loss(const CdmBundle& bundle, const ProficiencyState& theta_star, std::span<const Interaction> meta) {
  if (meta.empty()) throw ContractError("meta_loss: empty meta set");
  const auto theta = theta_star.theta();
  MetaLoss out;
  out.losses.reserve(meta.size());
  double sum = 0.0;
  for (const auto& it : meta) {
    const double l = bce_loss(it.label, predict(bundle, theta, bundle.item(it.question_id)));
    out.losses.push_back(l);
    sum += l;
  }
  out.mean = sum / static_cast<double>(meta.size());
  return out;
}

OuterStats outer_update(SelectionPolicy& policy, std::span<const ScoredEpisode> batch, RewardBaseline& baseline,
                        double lr, std::size_t num_questions) {
  if (batch.empty()) throw ContractError("outer_update: empty batch");
  const std::size_t n = batch.size();
  const std::size_t width = batch[0].step_loss.size();
  if (width == 0) throw ContractError("outer_update: episode without a loss");
  for (const auto& e : batch) {
    if (e.step_loss.size() != width) throw ContractError("outer_update: inconsistent loss widths");
    for (double l : e.step_loss) {
      if (!std::isfinite(l)) {
        throw TrainingError("non-finite loss in the episode of examinee " + std::to_string(e.trace->examinee_id));
      }
    }
  }

  baseline.value.assign(width, 0.0);
  std::vector<double> rewards(n);
  for (std::size_t s = 0; s < width; ++s) {
    for (std::size_t e = 0; e < n; ++e) rewards[e] = -batch[e].step_loss[s];
    baseline.value[s] = batch_mean(rewards);
  }

  OuterStats stats;
  stats.mean_reward = baseline.value.back();
  SelectionPolicy grad = SelectionPolicy::zeros_like(policy);
  for (const auto& e : batch) {
    const auto& tr = *e.trace;
    const std::size_t steps = tr.selected.size();
    if (width != 1 && width != steps) throw ContractError("outer_update: loss width must be 1 or T");
    // Credit of action t: its own advantage, or in per-step mode the sum of
    // the advantages of every later step it influences.
    std::vector<double> scale(steps, 0.0);
    if (width == 1) {
      std::fill(scale.begin(), scale.end(), -e.step_loss[0] - baseline.value[0]);
    } else {
      double acc = 0.0;
      for (std::size_t t = steps; t-- > 0;) {
        acc += -e.step_loss[t] - baseline.value[t];
        scale[t] = acc;
      }
    }
    SelectionMask mask = mask_of(tr.support_questions, num_questions);
    for (std::size_t t = 0; t < steps; ++t) {
      const int q = tr.selected[t].question_id;
      if (scale[t] != 0.0) {
        const auto state = encode_state(tr.history(t), num_questions);
        accumulate_log_prob_grad(policy, state, mask, q, scale[t] / static_cast<double>(n), grad);
      }
      mask.administer(q);
    }
    if (!all_finite(grad)) {
      throw TrainingError("non-finite policy gradient in the episode of examinee " + std::to_string(tr.examinee_id));
    }
  }

  double sq = 0.0;
  grad.for_each_array([&](const std::vector<double>& a) {
    for (double x : a) sq += x * x;
  });
  stats.grad_norm = std::sqrt(sq);

  std::vector<std::vector<double>*> dst;
  policy.for_each_array([&](std::vector<double>& a) { dst.push_back(&a); });
  std::size_t k = 0;
  grad.for_each_array([&](const std::vector<double>& g) {
    auto& p = *dst[k++];
    for (std::size_t i = 0; i < g.size(); ++i) p[i] += lr * g[i];
  });
  return stats;
}

StrategyState init_strategy_state(const Corpus& train) {
  std::array<std::size_t, kNumGroups> counts{};
  for (const auto& log : train.logs) {
    const Attribute a = attribute_of(log);
    for (const auto& it : log.items) ++counts[group_key(a, it.label).index()];
  }
  StrategyState s;
  auto rw = reweight_weights(counts);
  s.reweight = rw.weights;
  s.reweight_empty_groups = rw.empty_groups;
  s.dro_weights.fill(1.0 / kNumGroups);
  return s;
}

std::vector<double> batch_final_losses(const CdmBundle& bundle, std::span<const EpisodeInput> batch,
                                       std::size_t step, const TrainConfig& config, StrategyState& state,
                                       bool advance_state, std::uint64_t synth_seed) {
  const std::size_t n = batch.size();
  const double dn = static_cast<double>(n);
  std::vector<std::vector<double>> theta(n);
  std::vector<MetaLoss> ml(n);
  for (std::size_t e = 0; e < n; ++e) {
    const auto& st = batch[e].trace->theta_star.at(step);
    theta[e] = st.theta();
    ml[e] = meta_loss(bundle, st, batch[e].split->meta);
  }
  auto attr = [&](std::size_t e) { return batch[e].trace->attribute; };
  auto meta = [&](std::size_t e) -> const std::vector<Interaction>& { return batch[e].split->meta; };

  std::vector<double> out(n, 0.0);
  switch (config.strategy) {
    case Strategy::ERM:
      for (std::size_t e = 0; e < n; ++e) out[e] = ml[e].mean;
      break;

    case Strategy::Reweight:
      for (std::size_t e = 0; e < n; ++e) {
        double s = 0.0;
        for (std::size_t i = 0; i < meta(e).size(); ++i) {
          s += state.reweight[group_key(attr(e), meta(e)[i].label).index()] * ml[e].losses[i];
        }
        out[e] = s / static_cast<double>(meta(e).size());
      }
      break;

    case Strategy::GroupDRO: {
      std::array<double, kNumGroups> sum{};
      std::array<std::size_t, kNumGroups> cnt{};
      for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t i = 0; i < meta(e).size(); ++i) {
          const int g = group_key(attr(e), meta(e)[i].label).index();
          sum[g] += ml[e].losses[i];
          ++cnt[g];
        }
      }
      std::array<double, kNumGroups> mean{};
      std::array<bool, kNumGroups> present{};
      for (int g = 0; g < kNumGroups; ++g) {
        present[g] = cnt[g] > 0;
        mean[g] = present[g] ? sum[g] / static_cast<double>(cnt[g]) : 0.0;
      }
      const auto r = groupdro_step(mean, present, state.dro_weights, config.groupdro_eta);
      if (advance_state) state.dro_weights = r.weights;
      for (std::size_t e = 0; e < n; ++e) {
        double s = 0.0;
        for (std::size_t i = 0; i < meta(e).size(); ++i) {
          const int g = group_key(attr(e), meta(e)[i].label).index();
          s += r.weights[g] / static_cast<double>(cnt[g]) * ml[e].losses[i];
        }
        out[e] = dn * s;
      }
      break;
    }

    case Strategy::IRM: {
      std::array<std::vector<EnvPrediction>, 3> envs;
      std::vector<std::vector<EnvPrediction>> own(n);
      for (std::size_t e = 0; e < n; ++e) {
        for (const auto& it : meta(e)) {
          own[e].push_back({predict_logit(bundle, theta[e], bundle.item(it.question_id)), it.label});
        }
        auto& env = envs[static_cast<int>(attr(e))];
        env.insert(env.end(), own[e].begin(), own[e].end());
      }
      const bool active = std::count_if(envs.begin(), envs.end(), [](const auto& v) { return !v.empty(); }) >= 2;
      std::array<double, 3> g{};
      for (int k = 0; k < 3; ++k) g[k] = irm_env_gradient(envs[k]);
      for (std::size_t e = 0; e < n; ++e) {
        out[e] = ml[e].mean;
        if (!active) continue;
        const int k = static_cast<int>(attr(e));
        // This episode's share of sum_env g_env^2, so the batch mean of the
        // shares is exactly the penalty.
        double c = 0.0;
        for (const auto& p : own[e]) c += (sigmoid(p.logit) - p.label) * p.logit;
        c /= static_cast<double>(envs[k].size());
        out[e] += config.irm_lambda * dn * g[k] * c;
      }
      break;
    }

    case Strategy::MixupB:
    case Strategy::MixupSelf:
    case Strategy::MixupInner: {
      std::vector<BatchMember> members(n);
      for (std::size_t e = 0; e < n; ++e) {
        members[e] = {batch[e].trace->examinee_id, attr(e), theta[e], &meta(e)};
      }
      const auto synth = synthesize(config.strategy, bundle, members,
                                    MixupConfig{config.mixup_alpha, config.conflicting_only}, synth_seed);
      for (std::size_t e = 0; e < n; ++e) {
        std::vector<SyntheticSample> mine;
        for (const auto& s : synth) {
          if (s.examinee_id == members[e].examinee_id) mine.push_back(s);
        }
        out[e] = final_loss(ml[e].mean, examinee_synthetic_loss(bundle, theta[e], mine), config.omega);
      }
      break;
    }
  }
  return out;
}

nlohmann::ordered_json log_record_to_json(const TrainLogRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["strategy"] = r.strategy;
  j["train_loss"] = r.train_loss;
  j["valid_worst"] = r.valid_worst;
  j["valid_avg"] = r.valid_avg;
  return j;
}

std::string log_to_jsonl(std::span<const TrainLogRecord> log) {
  std::string out;
  for (const auto& r : log) {
    out += log_record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::uint64_t trajectory_hash(std::span<const TrainLogRecord> log) {
  std::uint64_t h = fnv1a("");
  for (const auto& r : log) {
    const double v[4] = {static_cast<double>(r.epoch), r.train_loss, r.valid_worst, r.valid_avg};
    h = fnv1a_doubles(v, 4, h);
  }
  return h;
}

EvalResult evaluate_policy(const Corpus& corpus, const std::vector<int>& examinee_ids, const CdmBundle& bundle,
                           const SelectionPolicy& policy, int steps, bool ood, const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.steps = steps;
  if (steps < 1) throw ConfigError("T must be >= 1");
  std::vector<Prediction> preds;
  std::vector<ExamineeRecord> records;
  EvalResult out;
  std::size_t excluded = 0;
  for (int id : examinee_ids) {
    const auto& log = corpus.log(id);
    const Attribute a = attribute_of(log);
    std::optional<EpisodeSplit> split;
    if (ood) {
      split = build_ood_meta(log, cfg.meta_frac, cfg.seed);
    } else {
      split = resplit_support_meta(log, cfg.meta_frac, cfg.seed, 0);
    }
    if (!split || !split->usable || split->meta.empty()) {
      ++excluded;
      continue;
    }
    auto trace = run_episode(bundle, policy, *split, a, cfg, EpisodeMode::Eval, 0);
    if (!trace) {
      ++excluded;
      continue;
    }
    const auto theta = trace->theta_star.back().theta();
    int meta_correct = 0;
    for (const auto& it : split->meta) {
      const double p = predict(bundle, theta, bundle.item(it.question_id));
      preds.push_back({group_key(a, it.label), classify(p), it.label});
      meta_correct += it.label;
    }
    records.push_back({id, a, static_cast<double>(trace->correct_selected()) / steps,
                       static_cast<double>(meta_correct) / static_cast<double>(split->meta.size())});
    out.traces.push_back(std::move(*trace));
  }
  out.report = report(preds, steps, ood);
  out.report.examinees = std::move(records);
  out.report.excluded = excluded;
  return out;
}

TrainResult train(const Corpus& corpus, const std::vector<int>& train_ids, const std::vector<int>& valid_ids,
                  const CdmBundle& bundle, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t nq = corpus.num_questions();
  const std::size_t steps = static_cast<std::size_t>(config.steps);

  TrainResult res;
  SelectionPolicy policy = SelectionPolicy::create(nq, config.policy_hidden, config.seed);
  StrategyState sstate = init_strategy_state(subset(corpus, train_ids));
  if (config.strategy == Strategy::Reweight) {
    for (int g : sstate.reweight_empty_groups) {
      std::cerr << "warning: reweight group " << GroupKey::from_index(g).name() << " is empty\n";
    }
  }

  auto validate_avg = [&](const SelectionPolicy& p) {
    return evaluate_policy(corpus, valid_ids, bundle, p, config.steps, false, config).report;
  };
  res.initial_valid_avg = valid_ids.empty() ? 0.0 : validate_avg(policy).avg;
  res.best_valid_avg = res.initial_valid_avg;
  res.policy = policy;
  int bad_epochs = 0;
  RewardBaseline baseline;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto ep = static_cast<std::uint64_t>(epoch);
    std::vector<int> order = train_ids;
    Rng order_rng(stream_seed({config.seed, u64(Stream::BatchOrder), ep}));
    shuffle(order, order_rng);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    std::uint64_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<EpisodeSplit> splits;
      std::vector<EpisodeTrace> traces;
      splits.reserve(end - start);
      traces.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& log = corpus.log(order[i]);
        auto split = resplit_support_meta(log, config.meta_frac, config.seed, ep);
        if (!split.usable || split.meta.empty()) {
          ++res.skipped_episodes;
          continue;
        }
        auto tr = run_episode(bundle, policy, split, attribute_of(log), config, EpisodeMode::Train, ep);
        if (!tr) {
          ++res.skipped_episodes;
          continue;
        }
        splits.push_back(std::move(split));
        traces.push_back(std::move(*tr));
      }
      if (traces.empty()) continue;

      // Deterministic reduction order: examinee id.
      std::vector<std::size_t> idx(traces.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(),
                [&](std::size_t a, std::size_t b) { return traces[a].examinee_id < traces[b].examinee_id; });
      std::vector<EpisodeInput> inputs;
      for (std::size_t i : idx) inputs.push_back({&traces[i], &splits[i]});

      std::vector<ScoredEpisode> scored(inputs.size());
      for (std::size_t e = 0; e < inputs.size(); ++e) scored[e].trace = inputs[e].trace;
      const std::size_t first = config.per_step_updates ? 0 : steps - 1;
      for (std::size_t t = first; t < steps; ++t) {
        const auto seed = stream_seed({config.seed, u64(Stream::Mixup), ep, batch_index, t});
        const auto losses = batch_final_losses(bundle, inputs, t, config, sstate, t + 1 == steps, seed);
        for (std::size_t e = 0; e < inputs.size(); ++e) scored[e].step_loss.push_back(losses[e]);
      }
      for (const auto& s : scored) {
        loss_sum += s.step_loss.back();
        ++loss_count;
      }
      outer_update(policy, scored, baseline, config.lr_outer, nq);
    }

    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.strategy = to_string(config.strategy);
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    if (!valid_ids.empty()) {
      const auto r = validate_avg(policy);
      rec.valid_worst = r.worst;
      rec.valid_avg = r.avg;
    }
    res.log.push_back(rec);

    if (valid_ids.empty() || rec.valid_avg > res.best_valid_avg) {
      res.policy = policy;
      res.best_valid_avg = rec.valid_avg;
      res.best_epoch = epoch;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    if (on_epoch) on_epoch(rec, policy, res.policy);
    if (bad_epochs >= config.patience) break;
  }
  res.last_policy = policy;
  return res;
}

}  // namespace dcat
