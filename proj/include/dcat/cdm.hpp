#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dcat/dataset.hpp"
#include "dcat/rng.hpp"
#include "json.hpp"

namespace dcat {

enum class CdmKind { IRT, NCDM };

std::string to_string(CdmKind kind);
CdmKind parse_cdm_kind(const std::string& s);

inline constexpr double kProbabilityEps = 1e-7;

// Proficiency is stored as an unconstrained raw vector; theta = sigmoid(raw)
// keeps every component inside (0, 1).
struct ProficiencyState {
  std::vector<double> raw;

  static ProficiencyState zeros(std::size_t dim) { return {std::vector<double>(dim, 0.0)}; }
  std::vector<double> theta() const;
  std::size_t dim() const { return raw.size(); }
  bool operator==(const ProficiencyState&) const = default;
};

// 1PL: discrimination fixed at 1.
struct IrtItem {
  double difficulty = 0.0;
  bool operator==(const IrtItem&) const = default;
};

struct NcdmItem {
  std::vector<double> concepts;    // Q row in [0,1]^K
  std::vector<double> difficulty;  // h_diff in (0,1)^K
  double discrimination = 0.5;     // h_disc in (0,1)
  bool operator==(const NcdmItem&) const = default;
};

using ItemParams = std::variant<IrtItem, NcdmItem>;

struct DenseLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weight;  // row-major rows x cols
  std::vector<double> bias;    // rows

  DenseLayer() = default;
  DenseLayer(std::size_t r, std::size_t c) : rows(r), cols(c), weight(r * c, 0.0), bias(r, 0.0) {}
  double& w(std::size_t r, std::size_t c) { return weight[r * cols + c]; }
  double w(std::size_t r, std::size_t c) const { return weight[r * cols + c]; }
  bool operator==(const DenseLayer&) const = default;
};

// K -> hidden1 -> hidden2 -> 1, sigmoid activations throughout.
struct NcdmNet {
  std::array<DenseLayer, 3> layers;

  static NcdmNet create(std::size_t num_concepts, std::size_t hidden1, std::size_t hidden2);
  // Xavier-normal weights clamped to be nonnegative; the biases of the two
  // upper layers start at -0.5 * row sum so their pre-activations begin near 0.
  static NcdmNet random(std::size_t num_concepts, std::size_t hidden1, std::size_t hidden2,
                        Rng& rng);
  std::size_t input_dim() const { return layers[0].cols; }
  bool operator==(const NcdmNet&) const = default;
};

// Zero every negative weight of the three layers; biases are left alone.
void enforce_monotonicity(NcdmNet& net);
NcdmNet enforce_monotonicity(NcdmNet&& net);

struct CdmBundle {
  CdmKind kind = CdmKind::IRT;
  int num_concepts = 1;
  std::vector<ItemParams> items;  // indexed by question id
  std::optional<NcdmNet> net;
  // Mean pre-trained raw proficiency, used only when learned_init is enabled.
  std::vector<double> init_raw;

  // Proficiency dimension: 1 for IRT, K for NCDM.
  std::size_t dim() const { return kind == CdmKind::IRT ? 1 : static_cast<std::size_t>(num_concepts); }
  const ItemParams& item(int question_id) const;
  ProficiencyState initial_state(bool learned_init) const;
};

double predict(const CdmBundle& bundle, std::span<const double> theta, const ItemParams& item);
double predict(const CdmBundle& bundle, const ProficiencyState& state, const ItemParams& item);
// Pre-sigmoid output z with predict() == sigmoid(z).
double predict_logit(const CdmBundle& bundle, std::span<const double> theta, const ItemParams& item);

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(int y, double p);

// Gradient of bce_loss(y, predict(...)) with respect to the raw proficiency.
std::vector<double> grad_theta(const CdmBundle& bundle, const ProficiencyState& state,
                               const ItemParams& item, int y);

struct Response {
  int question_id = 0;
  int label = 0;
};

struct InnerResult {
  ProficiencyState state;
  bool empty_responses = false;
};

// k_steps full-batch gradient-descent steps on the summed response loss.
InnerResult inner_optimize(const CdmBundle& bundle, const ProficiencyState& theta0,
                           std::span<const Response> responses, int k_steps, double lr);

double response_loss(const CdmBundle& bundle, const ProficiencyState& state,
                     std::span<const Response> responses);

enum class Optimizer { Adam, Sgd };

struct PretrainConfig {
  CdmKind kind = CdmKind::IRT;
  Optimizer optimizer = Optimizer::Adam;
  double lr = 0.002;
  int batch_size = 256;
  int epochs = 50;
  int patience = 5;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  std::uint64_t seed = 0;
  // Validation examinees: theta fitted on their support split, accuracy on meta.
  double valid_meta_frac = 0.2;
  int valid_fit_steps = 100;
  double valid_fit_lr = 0.1;
};

struct PretrainEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double valid_accuracy = 0.0;
};

struct PretrainResult {
  CdmBundle bundle;  // best-validation checkpoint
  std::vector<PretrainEpoch> log;
  int best_epoch = 0;
  double best_valid_accuracy = 0.0;
  // Accuracy of the final-epoch parameters on the validation examinees.
  double final_valid_accuracy = 0.0;
};

// Fits theta (training examinees), item parameters and the NCDM network on
// every training interaction. An empty validation corpus falls back to
// training accuracy for checkpoint selection.
PretrainResult pretrain(const Corpus& train, const Corpus& valid, const PretrainConfig& config);

// Fraction of meta interactions classified correctly after fitting theta on support.
double heldout_accuracy(const CdmBundle& bundle, const Corpus& corpus, double meta_frac,
                        std::uint64_t seed, int fit_steps, double fit_lr);

nlohmann::json bundle_to_json(const CdmBundle& bundle);
CdmBundle bundle_from_json(const nlohmann::json& j);
void save_bundle(const CdmBundle& bundle, const std::filesystem::path& path);
CdmBundle load_bundle(const std::filesystem::path& path);

// FNV-1a over the bit patterns of the frozen item parameters and network.
std::uint64_t parameter_hash(const CdmBundle& bundle);

}  // namespace dcat
