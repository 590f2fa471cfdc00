#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <utility>

namespace dcat {

// Derives an independent stream seed from a tuple of integers, e.g.
// (run_seed, epoch, examinee_id, step). No state is stored between calls.
std::uint64_t stream_seed(std::initializer_list<std::uint64_t> keys);

// Stream tags keep draws for different purposes on disjoint streams.
enum class Stream : std::uint64_t {
  SupportMeta = 0x51,
  OodMeta = 0x52,
  ExamineeSplit = 0x53,
  Selection = 0x54,
  Mixup = 0x55,
  BatchOrder = 0x56,
  PolicyInit = 0x57,
  CdmInit = 0x58,
  Synthetic = 0x59,
};

// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n); n > 0.
  std::uint64_t index(std::uint64_t n);
  double normal();
  double gamma(double shape);
  // lambda ~ Beta(alpha, alpha) via two gamma draws.
  double beta(double a, double b);

 private:
  std::uint64_t s_[4];
};

// Fisher-Yates; the same seed gives the same permutation on every platform.
template <class Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.index(i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace dcat
