#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcat/cdm.hpp"
#include "dcat/rng.hpp"
#include "json.hpp"

namespace dcat {

// Response history over the full question pool: +1 correct, -1 incorrect,
// 0 not administered.
struct StateVector {
  std::vector<std::int8_t> entries;

  std::size_t nonzero() const;
};

struct SelectionMask {
  std::vector<char> allowed;

  // Questions of the support set, all initially allowed.
  static SelectionMask from_support(std::span<const Interaction> support, std::size_t num_questions);
  std::size_t count() const;
  void administer(int question_id);
};

// Two-layer policy: state (num_questions) -> tanh hidden -> logits (num_questions).
// w_in stores one row of `hidden` weights per question so a sparse state
// only touches the rows of administered questions.
struct SelectionPolicy {
  std::size_t num_questions = 0;
  std::size_t hidden = 0;
  std::vector<double> w_in;   // num_questions x hidden
  std::vector<double> b_in;   // hidden
  std::vector<double> w_out;  // num_questions x hidden
  std::vector<double> b_out;  // num_questions

  // Xavier-uniform input layer; the output layer starts at zero so the
  // untrained policy is uniform over any mask.
  static SelectionPolicy create(std::size_t num_questions, std::size_t hidden, std::uint64_t seed);
  static SelectionPolicy zeros_like(const SelectionPolicy& other);

  std::size_t parameter_count() const { return w_in.size() + b_in.size() + w_out.size() + b_out.size(); }
  // Visits every parameter array in a fixed order.
  template <class F>
  void for_each_array(F&& f) {
    f(w_in);
    f(b_in);
    f(w_out);
    f(b_out);
  }
  template <class F>
  void for_each_array(F&& f) const {
    f(w_in);
    f(b_in);
    f(w_out);
    f(b_out);
  }
  bool operator==(const SelectionPolicy&) const = default;
};

inline constexpr double kMaskPenalty = -1e9;

StateVector encode_state(std::span<const Response> history, std::size_t num_questions);

// Unmasked network output.
std::vector<double> raw_logits(const SelectionPolicy& policy, const StateVector& state);

// Logits with kMaskPenalty added to every disallowed entry.
std::vector<double> policy_logits(const SelectionPolicy& policy, const StateVector& state,
                                  const SelectionMask& mask);

// Softmax over allowed entries only; disallowed entries are exactly 0.
std::vector<double> masked_softmax(std::span<const double> logits, const SelectionMask& mask);

enum class SelectMode { Sample, Greedy };

int select_question(const SelectionPolicy& policy, const StateVector& state, const SelectionMask& mask,
                    SelectMode mode, Rng& rng);
// Same, from precomputed (unmasked) logits.
int select_from_logits(std::span<const double> logits, const SelectionMask& mask, SelectMode mode, Rng& rng);

double log_prob(const SelectionPolicy& policy, const StateVector& state, const SelectionMask& mask,
                int question_id);

// grad += scale * d log_prob / d parameters.
void accumulate_log_prob_grad(const SelectionPolicy& policy, const StateVector& state,
                              const SelectionMask& mask, int question_id, double scale,
                              SelectionPolicy& grad);

nlohmann::json policy_to_json(const SelectionPolicy& policy);
SelectionPolicy policy_from_json(const nlohmann::json& j);
void save_policy(const SelectionPolicy& policy, const std::filesystem::path& path);
SelectionPolicy load_policy(const std::filesystem::path& path);
std::uint64_t policy_hash(const SelectionPolicy& policy);

}  // namespace dcat
