#include "dcat/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcat/common.hpp"
#include "dcat/io.hpp"
#include "dcat/kernels.hpp"

namespace dcat {

std::size_t StateVector::nonzero() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](auto v) { return v != 0; }));
}

SelectionMask SelectionMask::from_support(std::span<const Interaction> support, std::size_t num_questions) {
  SelectionMask m;
  m.allowed.assign(num_questions, 0);
  for (const auto& it : support) {
    if (it.question_id < 0 || static_cast<std::size_t>(it.question_id) >= num_questions) {
      throw ContractError("support question outside the pool");
    }
    m.allowed[it.question_id] = 1;
  }
  return m;
}

std::size_t SelectionMask::count() const {
  return static_cast<std::size_t>(std::count(allowed.begin(), allowed.end(), 1));
}

void SelectionMask::administer(int question_id) { allowed.at(question_id) = 0; }

SelectionPolicy SelectionPolicy::create(std::size_t num_questions, std::size_t hidden, std::uint64_t seed) {
  SelectionPolicy p;
  p.num_questions = num_questions;
  p.hidden = hidden;
  p.w_in.resize(num_questions * hidden);
  p.b_in.assign(hidden, 0.0);
  p.w_out.assign(num_questions * hidden, 0.0);
  p.b_out.assign(num_questions, 0.0);
  Rng rng(stream_seed({seed, static_cast<std::uint64_t>(Stream::PolicyInit)}));
  const double a = std::sqrt(6.0 / static_cast<double>(num_questions + hidden));
  for (auto& w : p.w_in) w = a * (2.0 * rng.uniform() - 1.0);
  return p;
}

SelectionPolicy SelectionPolicy::zeros_like(const SelectionPolicy& other) {
  SelectionPolicy p;
  p.num_questions = other.num_questions;
  p.hidden = other.hidden;
  p.w_in.assign(other.w_in.size(), 0.0);
  p.b_in.assign(other.b_in.size(), 0.0);
  p.w_out.assign(other.w_out.size(), 0.0);
  p.b_out.assign(other.b_out.size(), 0.0);
  return p;
}

StateVector encode_state(std::span<const Response> history, std::size_t num_questions) {
  StateVector s;
  s.entries.assign(num_questions, 0);
  for (const auto& r : history) {
    if (r.question_id < 0 || static_cast<std::size_t>(r.question_id) >= num_questions) {
      throw ContractError("history question outside the pool");
    }
    if (s.entries[r.question_id] != 0) {
      throw ContractError("question " + std::to_string(r.question_id) + " appears twice in the history");
    }
    s.entries[r.question_id] = r.label ? 1 : -1;
  }
  return s;
}

namespace {

void check_shapes(const SelectionPolicy& policy, const StateVector& state) {
  if (state.entries.size() != policy.num_questions) {
    throw ContractError("state length " + std::to_string(state.entries.size()) + " != policy pool " +
                        std::to_string(policy.num_questions));
  }
}

void check_mask(const SelectionPolicy& policy, const SelectionMask& mask) {
  if (mask.allowed.size() != policy.num_questions) throw ContractError("mask length does not match the pool");
  if (mask.count() == 0) throw ContractError("no candidate question: the selection mask is empty");
}

std::vector<double> hidden_activations(const SelectionPolicy& policy, const StateVector& state) {
  const auto& kt = kernels::active();
  std::vector<double> h = policy.b_in;
  for (std::size_t q = 0; q < policy.num_questions; ++q) {
    if (state.entries[q] == 0) continue;
    kt.axpy(static_cast<double>(state.entries[q]), policy.w_in.data() + q * policy.hidden, h.data(), policy.hidden);
  }
  for (auto& v : h) v = std::tanh(v);
  return h;
}

std::vector<double> output_logits(const SelectionPolicy& policy, const std::vector<double>& h) {
  std::vector<double> logits(policy.num_questions);
  kernels::active().gemv(policy.w_out.data(), h.data(), policy.b_out.data(), logits.data(), policy.num_questions,
                         policy.hidden);
  return logits;
}

}  // namespace

std::vector<double> raw_logits(const SelectionPolicy& policy, const StateVector& state) {
  check_shapes(policy, state);
  return output_logits(policy, hidden_activations(policy, state));
}

std::vector<double> policy_logits(const SelectionPolicy& policy, const StateVector& state,
                                  const SelectionMask& mask) {
  check_mask(policy, mask);
  auto logits = raw_logits(policy, state);
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (!mask.allowed[q]) logits[q] += kMaskPenalty;
  }
  return logits;
}

std::vector<double> masked_softmax(std::span<const double> logits, const SelectionMask& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (mask.allowed[q]) mx = std::max(mx, logits[q]);
  }
  if (!std::isfinite(mx)) throw ContractError("no candidate question: the selection mask is empty");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (!mask.allowed[q]) continue;
    p[q] = std::exp(logits[q] - mx);
    z += p[q];
  }
  for (auto& v : p) v /= z;
  return p;
}

int select_from_logits(std::span<const double> logits, const SelectionMask& mask, SelectMode mode, Rng& rng) {
  if (mode == SelectMode::Greedy) {
    int best = -1;
    for (std::size_t q = 0; q < logits.size(); ++q) {
      if (!mask.allowed[q]) continue;
      if (best < 0 || logits[q] > logits[best]) best = static_cast<int>(q);
    }
    if (best < 0) throw ContractError("no candidate question: the selection mask is empty");
    return best;
  }
  const auto p = masked_softmax(logits, mask);
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t q = 0; q < p.size(); ++q) {
    if (!mask.allowed[q]) continue;
    last = static_cast<int>(q);
    acc += p[q];
    if (u < acc) return last;
  }
  return last;  // u landed in the rounding slack above the final cumulative sum
}

int select_question(const SelectionPolicy& policy, const StateVector& state, const SelectionMask& mask,
                    SelectMode mode, Rng& rng) {
  check_mask(policy, mask);
  const auto logits = raw_logits(policy, state);
  return select_from_logits(logits, mask, mode, rng);
}

double log_prob(const SelectionPolicy& policy, const StateVector& state, const SelectionMask& mask,
                int question_id) {
  check_mask(policy, mask);
  if (question_id < 0 || static_cast<std::size_t>(question_id) >= policy.num_questions ||
      !mask.allowed[question_id]) {
    throw ContractError("log_prob of a question the mask does not allow");
  }
  const auto logits = raw_logits(policy, state);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (mask.allowed[q]) mx = std::max(mx, logits[q]);
  }
  double z = 0.0;
  for (std::size_t q = 0; q < logits.size(); ++q) {
    if (mask.allowed[q]) z += std::exp(logits[q] - mx);
  }
  return logits[question_id] - mx - std::log(z);
}

void accumulate_log_prob_grad(const SelectionPolicy& policy, const StateVector& state,
                              const SelectionMask& mask, int question_id, double scale,
                              SelectionPolicy& grad) {
  check_shapes(policy, state);
  check_mask(policy, mask);
  if (!mask.allowed.at(question_id)) throw ContractError("gradient of a disallowed question");
  const auto& kt = kernels::active();
  const auto h = hidden_activations(policy, state);
  const auto logits = output_logits(policy, h);
  const auto p = masked_softmax(logits, mask);

  std::vector<double> dlogits(policy.num_questions, 0.0);
  for (std::size_t q = 0; q < policy.num_questions; ++q) {
    if (mask.allowed[q]) dlogits[q] = -p[q];
  }
  dlogits[question_id] += 1.0;

  std::vector<double> dh(policy.hidden, 0.0);
  kt.gemv_t_acc(policy.w_out.data(), dlogits.data(), dh.data(), policy.num_questions, policy.hidden);
  kt.ger(scale, dlogits.data(), h.data(), grad.w_out.data(), policy.num_questions, policy.hidden);
  kt.axpy(scale, dlogits.data(), grad.b_out.data(), policy.num_questions);

  for (std::size_t j = 0; j < policy.hidden; ++j) dh[j] *= 1.0 - h[j] * h[j];
  kt.axpy(scale, dh.data(), grad.b_in.data(), policy.hidden);
  for (std::size_t q = 0; q < policy.num_questions; ++q) {
    if (state.entries[q] == 0) continue;
    kt.axpy(scale * state.entries[q], dh.data(), grad.w_in.data() + q * policy.hidden, policy.hidden);
  }
}

nlohmann::json policy_to_json(const SelectionPolicy& policy) {
  return {{"format", "dcat-policy"}, {"version", 1},       {"num_questions", policy.num_questions},
          {"hidden", policy.hidden}, {"w_in", policy.w_in}, {"b_in", policy.b_in},
          {"w_out", policy.w_out},   {"b_out", policy.b_out}};
}

SelectionPolicy policy_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dcat-policy") throw ConfigError("not a policy checkpoint");
  SelectionPolicy p;
  p.num_questions = j.at("num_questions").get<std::size_t>();
  p.hidden = j.at("hidden").get<std::size_t>();
  p.w_in = j.at("w_in").get<std::vector<double>>();
  p.b_in = j.at("b_in").get<std::vector<double>>();
  p.w_out = j.at("w_out").get<std::vector<double>>();
  p.b_out = j.at("b_out").get<std::vector<double>>();
  if (p.w_in.size() != p.num_questions * p.hidden || p.w_out.size() != p.num_questions * p.hidden ||
      p.b_in.size() != p.hidden || p.b_out.size() != p.num_questions) {
    throw ConfigError("policy checkpoint does not match its shape header");
  }
  return p;
}

void save_policy(const SelectionPolicy& policy, const std::filesystem::path& path) {
  write_file_atomic(path, policy_to_json(policy).dump() + "\n");
}

SelectionPolicy load_policy(const std::filesystem::path& path) {
  return policy_from_json(nlohmann::json::parse(read_file(path)));
}

std::uint64_t policy_hash(const SelectionPolicy& policy) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  policy.for_each_array([&](const std::vector<double>& a) { h = fnv1a_doubles(a.data(), a.size(), h); });
  return h;
}

}  // namespace dcat
