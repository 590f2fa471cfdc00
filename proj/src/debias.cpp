#include "dcat/debias.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcat/common.hpp"

namespace dcat {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::ERM:
      return "ERM";
    case Strategy::IRM:
      return "IRM";
    case Strategy::GroupDRO:
      return "GroupDRO";
    case Strategy::Reweight:
      return "Reweight";
    case Strategy::MixupB:
      return "MixupB";
    case Strategy::MixupSelf:
      return "MixupSelf";
    case Strategy::MixupInner:
      return "MixupInner";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy v : {Strategy::ERM, Strategy::IRM, Strategy::GroupDRO, Strategy::Reweight, Strategy::MixupB,
                     Strategy::MixupSelf, Strategy::MixupInner}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown strategy '" + s + "'");
}

bool is_mixup(Strategy s) {
  return s == Strategy::MixupB || s == Strategy::MixupSelf || s == Strategy::MixupInner;
}

double similarity(std::span<const double> theta_i, std::span<const double> theta_j) {
  if (theta_i.size() != theta_j.size()) throw ContractError("similarity: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < theta_i.size(); ++k) {
    const double d = theta_i[k] - theta_j[k];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<int> rank_partners(std::span<const double> theta, std::span<const BatchMember> pool) {
  std::vector<std::pair<double, int>> scored;
  scored.reserve(pool.size());
  for (const auto& m : pool) scored.emplace_back(similarity(theta, m.theta), m.examinee_id);
  std::sort(scored.begin(), scored.end());
  std::vector<int> ids;
  ids.reserve(scored.size());
  for (const auto& [d, id] : scored) ids.push_back(id);
  return ids;
}

std::optional<int> retrieve_partner(std::span<const double> theta, std::span<const BatchMember> pool) {
  std::optional<int> best;
  double best_d = 0.0;
  for (const auto& m : pool) {
    const double d = similarity(theta, m.theta);
    if (!best || d < best_d || (d == best_d && m.examinee_id < *best)) {
      best = m.examinee_id;
      best_d = d;
    }
  }
  return best;
}

std::optional<Interaction> draw_partner_interaction(std::span<const int> ranked_partners,
                                                    std::span<const BatchMember> pool, int label, Rng& rng) {
  for (int id : ranked_partners) {
    auto it = std::find_if(pool.begin(), pool.end(), [id](const BatchMember& m) { return m.examinee_id == id; });
    if (it == pool.end() || !it->meta) continue;
    std::vector<const Interaction*> eligible;
    for (const auto& x : *it->meta) {
      if (x.label == label) eligible.push_back(&x);
    }
    if (eligible.empty()) continue;
    return *eligible[rng.index(eligible.size())];
  }
  return std::nullopt;
}

namespace {

double lerp_within(double a, double b, double lambda) {
  const double v = lambda * a + (1.0 - lambda) * b;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

ItemParams mixup_item(const ItemParams& q_i, const ItemParams& q_j, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("mixup lambda outside [0, 1]");
  if (q_i.index() != q_j.index()) throw ContractError("mixup of items from different model kinds");
  if (const auto* a = std::get_if<IrtItem>(&q_i)) {
    const auto& b = std::get<IrtItem>(q_j);
    return IrtItem{lerp_within(a->difficulty, b.difficulty, lambda)};
  }
  const auto& a = std::get<NcdmItem>(q_i);
  const auto& b = std::get<NcdmItem>(q_j);
  if (a.concepts.size() != b.concepts.size() || a.difficulty.size() != b.difficulty.size()) {
    throw ContractError("mixup of NCDM items with different concept counts");
  }
  NcdmItem out;
  out.concepts.resize(a.concepts.size());
  out.difficulty.resize(a.difficulty.size());
  for (std::size_t k = 0; k < a.concepts.size(); ++k) out.concepts[k] = lerp_within(a.concepts[k], b.concepts[k], lambda);
  for (std::size_t k = 0; k < a.difficulty.size(); ++k) {
    out.difficulty[k] = lerp_within(a.difficulty[k], b.difficulty[k], lambda);
  }
  out.discrimination = lerp_within(a.discrimination, b.discrimination, lambda);
  return out;
}

std::vector<SyntheticSample> synthesize(Strategy strategy, const CdmBundle& bundle,
                                        std::span<const BatchMember> batch, const MixupConfig& config,
                                        std::uint64_t rng_seed, SynthesisStats* stats) {
  if (!is_mixup(strategy)) throw ContractError("synthesize called for a non-Mixup strategy");
  SynthesisStats local;
  std::vector<SyntheticSample> out;

  std::vector<BatchMember> b_pool;
  for (const auto& m : batch) {
    if (m.attribute == Attribute::B && m.meta) b_pool.push_back(m);
  }
  local.empty_b_pool = b_pool.empty();

  for (const auto& m : batch) {
    if (m.attribute == Attribute::B || !m.meta) continue;
    Rng rng(stream_seed({rng_seed, static_cast<std::uint64_t>(Stream::Mixup),
                         static_cast<std::uint64_t>(m.examinee_id)}));

    std::vector<int> ranked;
    std::vector<BatchMember> inner_pool;
    if (strategy == Strategy::MixupB) {
      ranked = rank_partners(m.theta, b_pool);
    } else if (strategy == Strategy::MixupInner) {
      for (const auto& o : batch) {
        if (o.examinee_id != m.examinee_id && o.attribute == m.attribute && o.meta) inner_pool.push_back(o);
      }
      ranked = rank_partners(m.theta, inner_pool);
    }
    std::span<const BatchMember> pool = strategy == Strategy::MixupB ? std::span<const BatchMember>(b_pool)
                                                                     : std::span<const BatchMember>(inner_pool);

    for (const auto& qi : *m.meta) {
      const bool conflicting = group_key(m.attribute, qi.label).bias() == BiasKind::Conflicting;
      if (config.conflicting_only && !conflicting) continue;
      ++local.eligible;

      std::optional<Interaction> qj;
      if (strategy == Strategy::MixupSelf) {
        std::vector<const Interaction*> own;
        for (const auto& x : *m.meta) {
          if (x.label == qi.label && x.question_id != qi.question_id) own.push_back(&x);
        }
        if (!own.empty()) qj = *own[rng.index(own.size())];
      } else {
        qj = draw_partner_interaction(ranked, pool, qi.label, rng);
      }
      if (!qj) {
        ++local.skipped;
        continue;
      }
      const double lambda = rng.beta(config.alpha, config.alpha);
      SyntheticSample s;
      s.examinee_id = m.examinee_id;
      s.item = mixup_item(bundle.item(qi.question_id), bundle.item(qj->question_id), lambda);
      s.label = qi.label;
      s.source_i = qi;
      s.source_j = *qj;
      s.lambda = lambda;
      out.push_back(std::move(s));
    }
  }
  if (stats) *stats = local;
  return out;
}

double examinee_synthetic_loss(const CdmBundle& bundle, std::span<const double> theta,
                               std::span<const SyntheticSample> samples) {
  double total = 0.0;
  for (const auto& s : samples) total += bce_loss(s.label, predict(bundle, theta, s.item));
  return total;
}

double synthetic_loss(const CdmBundle& bundle, std::span<const BatchMember> batch,
                      std::span<const SyntheticSample> synth) {
  if (synth.empty() || batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : synth) {
    auto it = std::find_if(batch.begin(), batch.end(),
                           [&](const BatchMember& m) { return m.examinee_id == s.examinee_id; });
    if (it == batch.end()) throw ContractError("synthetic sample owned by an examinee outside the batch");
    total += bce_loss(s.label, predict(bundle, it->theta, s.item));
  }
  return total / static_cast<double>(batch.size());
}

double final_loss(double emp, double syn, double omega) {
  if (omega < 0.0) throw ContractError("omega must be nonnegative");
  return emp + omega * syn;
}

double irm_env_gradient(std::span<const EnvPrediction> env) {
  if (env.empty()) return 0.0;
  double g = 0.0;
  for (const auto& e : env) g += (sigmoid(e.logit) - e.label) * e.logit;
  return g / static_cast<double>(env.size());
}

double irm_penalty(std::span<const std::vector<EnvPrediction>> envs) {
  std::size_t nonempty = 0;
  for (const auto& e : envs) nonempty += !e.empty();
  if (nonempty < 2) return 0.0;
  double penalty = 0.0;
  for (const auto& e : envs) {
    const double g = irm_env_gradient(e);
    penalty += g * g;
  }
  return penalty;
}

GroupDroResult groupdro_step(const std::array<double, kNumGroups>& group_losses,
                             const std::array<bool, kNumGroups>& present,
                             const std::array<double, kNumGroups>& weights, double eta) {
  GroupDroResult r;
  double z = 0.0;
  for (int k = 0; k < kNumGroups; ++k) {
    r.weights[k] = present[k] ? weights[k] * std::exp(eta * group_losses[k]) : weights[k];
    z += r.weights[k];
  }
  if (z > 0.0) {
    for (auto& w : r.weights) w /= z;
  }
  for (int k = 0; k < kNumGroups; ++k) {
    if (present[k]) r.loss += r.weights[k] * group_losses[k];
  }
  return r;
}

ReweightResult reweight_weights(const std::array<std::size_t, kNumGroups>& counts) {
  ReweightResult r;
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  for (int k = 0; k < kNumGroups; ++k) {
    if (counts[k] == 0) {
      r.weights[k] = 0.0;
      r.empty_groups.push_back(k);
    } else {
      r.weights[k] = total / (kNumGroups * static_cast<double>(counts[k]));
    }
  }
  return r;
}

}  // namespace dcat
