#include "dcat/cdm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcat/common.hpp"
#include "dcat/io.hpp"
#include "dcat/kernels.hpp"

namespace dcat {

std::string to_string(CdmKind kind) { return kind == CdmKind::IRT ? "IRT" : "NCDM"; }

CdmKind parse_cdm_kind(const std::string& s) {
  if (s == "IRT" || s == "irt") return CdmKind::IRT;
  if (s == "NCDM" || s == "ncdm") return CdmKind::NCDM;
  throw ConfigError("unknown cdm kind '" + s + "'");
}

std::vector<double> ProficiencyState::theta() const {
  std::vector<double> t(raw.size());
  std::transform(raw.begin(), raw.end(), t.begin(), sigmoid);
  return t;
}

NcdmNet NcdmNet::create(std::size_t num_concepts, std::size_t hidden1, std::size_t hidden2) {
  NcdmNet net;
  net.layers[0] = DenseLayer(hidden1, num_concepts);
  net.layers[1] = DenseLayer(hidden2, hidden1);
  net.layers[2] = DenseLayer(1, hidden2);
  return net;
}

NcdmNet NcdmNet::random(std::size_t num_concepts, std::size_t hidden1, std::size_t hidden2,
                        Rng& rng) {
  NcdmNet net = create(num_concepts, hidden1, hidden2);
  for (auto& layer : net.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(layer.rows + layer.cols));
    for (auto& w : layer.weight) w = sd * rng.normal();
  }
  enforce_monotonicity(net);
  // The hidden activations sit near 0.5 at the start, so with nonnegative
  // weights every later layer would begin saturated. Center them instead.
  for (std::size_t l = 1; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    for (std::size_t r = 0; r < layer.rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < layer.cols; ++c) s += layer.w(r, c);
      layer.bias[r] = -0.5 * s;
    }
  }
  return net;
}

void enforce_monotonicity(NcdmNet& net) {
  for (auto& layer : net.layers) {
    for (auto& w : layer.weight) {
      if (w < 0.0) w = 0.0;
    }
  }
}

NcdmNet enforce_monotonicity(NcdmNet&& net) {
  enforce_monotonicity(net);
  return std::move(net);
}

const ItemParams& CdmBundle::item(int question_id) const {
  if (question_id < 0 || static_cast<std::size_t>(question_id) >= items.size()) {
    throw ContractError("question id " + std::to_string(question_id) + " outside the bundle");
  }
  return items[question_id];
}

ProficiencyState CdmBundle::initial_state(bool learned_init) const {
  if (learned_init && init_raw.size() == dim()) return {init_raw};
  return ProficiencyState::zeros(dim());
}

namespace {

struct NcdmForward {
  std::vector<double> x;
  std::vector<double> f1;
  std::vector<double> f2;
  double z3 = 0.0;
  double p = 0.5;
};

void check_ncdm(const CdmBundle& bundle, std::span<const double> theta, const NcdmItem& item) {
  if (!bundle.net) throw ContractError("NCDM bundle without network");
  const std::size_t k = bundle.net->input_dim();
  if (theta.size() != k || item.concepts.size() != k || item.difficulty.size() != k) {
    throw ContractError("NCDM dimension mismatch: theta " + std::to_string(theta.size()) +
                        ", concepts " + std::to_string(item.concepts.size()) + ", net " +
                        std::to_string(k));
  }
}

NcdmForward ncdm_forward(const NcdmNet& net, std::span<const double> theta, const NcdmItem& item) {
  const auto& kt = kernels::active();
  const auto& l1 = net.layers[0];
  const auto& l2 = net.layers[1];
  const auto& l3 = net.layers[2];
  NcdmForward f;
  f.x.resize(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    f.x[k] = item.concepts[k] * (theta[k] - item.difficulty[k]) * item.discrimination;
  }
  f.f1.resize(l1.rows);
  kt.gemv(l1.weight.data(), f.x.data(), l1.bias.data(), f.f1.data(), l1.rows, l1.cols);
  for (auto& v : f.f1) v = sigmoid(v);
  f.f2.resize(l2.rows);
  kt.gemv(l2.weight.data(), f.f1.data(), l2.bias.data(), f.f2.data(), l2.rows, l2.cols);
  for (auto& v : f.f2) v = sigmoid(v);
  f.z3 = kt.dot(l3.weight.data(), f.f2.data(), l3.cols) + l3.bias[0];
  f.p = sigmoid(f.z3);
  return f;
}

// Backpropagates dloss/dz3 to the interaction-layer input x. Optionally
// accumulates the network parameter gradients into `net_grad`.
std::vector<double> ncdm_backward(const NcdmNet& net, const NcdmForward& f, double dz3,
                                  NcdmNet* net_grad) {
  const auto& kt = kernels::active();
  const auto& l1 = net.layers[0];
  const auto& l2 = net.layers[1];
  const auto& l3 = net.layers[2];

  std::vector<double> dz2(l2.rows, 0.0);
  for (std::size_t i = 0; i < l2.rows; ++i) dz2[i] = dz3 * l3.weight[i] * f.f2[i] * (1.0 - f.f2[i]);
  std::vector<double> dz1(l1.rows, 0.0);
  kt.gemv_t_acc(l2.weight.data(), dz2.data(), dz1.data(), l2.rows, l2.cols);
  for (std::size_t i = 0; i < l1.rows; ++i) dz1[i] *= f.f1[i] * (1.0 - f.f1[i]);
  std::vector<double> dx(l1.cols, 0.0);
  kt.gemv_t_acc(l1.weight.data(), dz1.data(), dx.data(), l1.rows, l1.cols);

  if (net_grad) {
    auto& g1 = net_grad->layers[0];
    auto& g2 = net_grad->layers[1];
    auto& g3 = net_grad->layers[2];
    kt.axpy(dz3, f.f2.data(), g3.weight.data(), l3.cols);
    g3.bias[0] += dz3;
    kt.ger(1.0, dz2.data(), f.f1.data(), g2.weight.data(), l2.rows, l2.cols);
    kt.axpy(1.0, dz2.data(), g2.bias.data(), l2.rows);
    kt.ger(1.0, dz1.data(), f.x.data(), g1.weight.data(), l1.rows, l1.cols);
    kt.axpy(1.0, dz1.data(), g1.bias.data(), l1.rows);
  }
  return dx;
}

}  // namespace

double predict(const CdmBundle& bundle, std::span<const double> theta, const ItemParams& item) {
  if (const auto* irt = std::get_if<IrtItem>(&item)) {
    if (bundle.kind != CdmKind::IRT || theta.size() != 1) {
      throw ContractError("IRT prediction needs an IRT bundle and a scalar theta");
    }
    return sigmoid(theta[0] - irt->difficulty);
  }
  const auto& ncdm = std::get<NcdmItem>(item);
  if (bundle.kind != CdmKind::NCDM) throw ContractError("NCDM item passed to an IRT bundle");
  check_ncdm(bundle, theta, ncdm);
  return ncdm_forward(*bundle.net, theta, ncdm).p;
}

double predict_logit(const CdmBundle& bundle, std::span<const double> theta, const ItemParams& item) {
  if (const auto* irt = std::get_if<IrtItem>(&item)) {
    if (bundle.kind != CdmKind::IRT || theta.size() != 1) {
      throw ContractError("IRT prediction needs an IRT bundle and a scalar theta");
    }
    return theta[0] - irt->difficulty;
  }
  const auto& ncdm = std::get<NcdmItem>(item);
  if (bundle.kind != CdmKind::NCDM) throw ContractError("NCDM item passed to an IRT bundle");
  check_ncdm(bundle, theta, ncdm);
  return ncdm_forward(*bundle.net, theta, ncdm).z3;
}

double predict(const CdmBundle& bundle, const ProficiencyState& state, const ItemParams& item) {
  const auto theta = state.theta();
  return predict(bundle, theta, item);
}

double bce_loss(int y, double p) {
  p = std::clamp(p, kProbabilityEps, 1.0 - kProbabilityEps);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

std::vector<double> grad_theta(const CdmBundle& bundle, const ProficiencyState& state,
                               const ItemParams& item, int y) {
  const auto theta = state.theta();
  std::vector<double> g(theta.size(), 0.0);
  if (const auto* irt = std::get_if<IrtItem>(&item)) {
    if (bundle.kind != CdmKind::IRT || theta.size() != 1) {
      throw ContractError("IRT gradient needs an IRT bundle and a scalar theta");
    }
    const double p = sigmoid(theta[0] - irt->difficulty);
    g[0] = (p - y) * theta[0] * (1.0 - theta[0]);
    return g;
  }
  const auto& ncdm = std::get<NcdmItem>(item);
  if (bundle.kind != CdmKind::NCDM) throw ContractError("NCDM item passed to an IRT bundle");
  check_ncdm(bundle, theta, ncdm);
  const auto f = ncdm_forward(*bundle.net, theta, ncdm);
  const auto dx = ncdm_backward(*bundle.net, f, f.p - y, nullptr);
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = dx[k] * ncdm.concepts[k] * ncdm.discrimination * theta[k] * (1.0 - theta[k]);
  }
  return g;
}

double response_loss(const CdmBundle& bundle, const ProficiencyState& state,
                     std::span<const Response> responses) {
  const auto theta = state.theta();
  double total = 0.0;
  for (const auto& r : responses) total += bce_loss(r.label, predict(bundle, theta, bundle.item(r.question_id)));
  return total;
}

InnerResult inner_optimize(const CdmBundle& bundle, const ProficiencyState& theta0,
                           std::span<const Response> responses, int k_steps, double lr) {
  if (k_steps < 1) throw ContractError("inner_optimize: k_steps must be >= 1");
  if (theta0.dim() != bundle.dim()) throw ContractError("inner_optimize: proficiency dimension mismatch");
  InnerResult out{theta0, false};
  if (responses.empty()) {
    out.empty_responses = true;
    return out;
  }
  std::vector<double> g(theta0.dim());
  for (int step = 0; step < k_steps; ++step) {
    std::fill(g.begin(), g.end(), 0.0);
    for (const auto& r : responses) {
      const auto gi = grad_theta(bundle, out.state, bundle.item(r.question_id), r.label);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
    }
    for (std::size_t k = 0; k < g.size(); ++k) out.state.raw[k] -= lr * g[k];
  }
  return out;
}

double heldout_accuracy(const CdmBundle& bundle, const Corpus& corpus, double meta_frac,
                        std::uint64_t seed, int fit_steps, double fit_lr) {
  std::size_t hits = 0, total = 0;
  for (const auto& log : corpus.logs) {
    if (log.items.size() < 2) continue;
    const auto split = resplit_support_meta(log, meta_frac, seed, 0);
    std::vector<Response> support;
    for (const auto& it : split.support) support.push_back({it.question_id, it.label});
    const auto fitted = inner_optimize(bundle, bundle.initial_state(false), support, fit_steps, fit_lr);
    const auto theta = fitted.state.theta();
    for (const auto& it : split.meta) {
      const int yhat = predict(bundle, theta, bundle.item(it.question_id)) >= 0.5 ? 1 : 0;
      hits += yhat == it.label;
      ++total;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

namespace {

// Flat parameter vector with lazily-updated Adam moments. Only coordinates
// touched by the current batch are stepped.
class ParamBlock {
 public:
  explicit ParamBlock(std::size_t n) : value(n, 0.0), grad(n, 0.0), m_(n, 0.0), v_(n, 0.0), touched_(n, 0) {}

  void touch(std::size_t i) {
    if (!touched_[i]) {
      touched_[i] = 1;
      active_.push_back(i);
    }
  }
  void touch_all() {
    for (std::size_t i = 0; i < value.size(); ++i) touch(i);
  }

  void step(Optimizer opt, double lr, double scale, long t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i : active_) {
      const double g = grad[i] * scale;
      if (opt == Optimizer::Sgd) {
        value[i] -= lr * g;
      } else {
        m_[i] = b1 * m_[i] + (1.0 - b1) * g;
        v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
        value[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
      }
      grad[i] = 0.0;
      touched_[i] = 0;
    }
    active_.clear();
  }

  std::vector<double> value;
  std::vector<double> grad;

 private:
  std::vector<double> m_, v_;
  std::vector<char> touched_;
  std::vector<std::size_t> active_;
};

void net_to_flat(const NcdmNet& net, std::vector<double>& flat) {
  flat.clear();
  for (const auto& l : net.layers) {
    flat.insert(flat.end(), l.weight.begin(), l.weight.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
}

void flat_to_net(const std::vector<double>& flat, NcdmNet& net) {
  std::size_t off = 0;
  for (auto& l : net.layers) {
    std::copy_n(flat.begin() + off, l.weight.size(), l.weight.begin());
    off += l.weight.size();
    std::copy_n(flat.begin() + off, l.bias.size(), l.bias.begin());
    off += l.bias.size();
  }
}

struct PretrainModel {
  CdmKind kind;
  std::size_t k;    // concepts
  std::size_t dim;  // proficiency dimension
  std::size_t item_width;
  ParamBlock theta;  // per training examinee, raw
  ParamBlock items;  // IRT: b. NCDM: raw h_diff (K) then raw h_disc.
  ParamBlock net;    // flattened NcdmNet (NCDM only)
  NcdmNet net_view;
  std::vector<std::vector<double>> concept_rows;

  CdmBundle to_bundle(int num_concepts) const {
    CdmBundle b;
    b.kind = kind;
    b.num_concepts = num_concepts;
    const std::size_t nq = concept_rows.size();
    b.items.reserve(nq);
    for (std::size_t q = 0; q < nq; ++q) {
      const double* p = items.value.data() + q * item_width;
      if (kind == CdmKind::IRT) {
        b.items.emplace_back(IrtItem{p[0]});
      } else {
        NcdmItem it;
        it.concepts = concept_rows[q];
        it.difficulty.resize(k);
        for (std::size_t j = 0; j < k; ++j) it.difficulty[j] = sigmoid(p[j]);
        it.discrimination = sigmoid(p[k]);
        b.items.emplace_back(std::move(it));
      }
    }
    if (kind == CdmKind::NCDM) b.net = net_view;
    const std::size_t n = dim ? theta.value.size() / dim : 0;
    b.init_raw.assign(dim, 0.0);
    if (n > 0) {
      for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t d = 0; d < dim; ++d) b.init_raw[d] += theta.value[e * dim + d];
      }
      for (auto& v : b.init_raw) v /= static_cast<double>(n);
    }
    return b;
  }
};

}  // namespace

PretrainResult pretrain(const Corpus& train, const Corpus& valid, const PretrainConfig& config) {
  if (train.logs.empty()) throw ContractError("pretrain: empty training split");
  if (config.batch_size < 1 || config.epochs < 1) throw ConfigError("pretrain: batch_size and epochs must be >= 1");
  const std::size_t k = static_cast<std::size_t>(train.num_concepts);
  const std::size_t dim = config.kind == CdmKind::IRT ? 1 : k;
  const std::size_t nq = train.num_questions();
  const std::size_t item_width = config.kind == CdmKind::IRT ? 1 : k + 1;

  PretrainModel model{config.kind, k, dim, item_width, ParamBlock(train.logs.size() * dim),
                      ParamBlock(nq * item_width), ParamBlock(0), {}, {}};
  Rng init_rng(stream_seed({config.seed, static_cast<std::uint64_t>(Stream::CdmInit)}));
  for (auto& v : model.theta.value) v = 0.01 * init_rng.normal();
  for (auto& v : model.items.value) v = 0.01 * init_rng.normal();
  model.concept_rows.assign(nq, std::vector<double>(k, 0.0));
  for (std::size_t q = 0; q < nq; ++q) {
    for (int c : train.questions[q].concept_ids) model.concept_rows[q][c] = 1.0;
  }
  if (config.kind == CdmKind::NCDM) {
    model.net_view = NcdmNet::random(k, config.hidden1, config.hidden2, init_rng);
    std::vector<double> flat;
    net_to_flat(model.net_view, flat);
    model.net = ParamBlock(flat.size());
    model.net.value = flat;
  }

  struct Row {
    std::uint32_t examinee_slot;
    std::uint32_t question;
    int label;
  };
  std::vector<Row> rows;
  for (std::size_t e = 0; e < train.logs.size(); ++e) {
    for (const auto& it : train.logs[e].items) {
      rows.push_back({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(it.question_id), it.label});
    }
  }

  NcdmNet net_grad;
  if (config.kind == CdmKind::NCDM) net_grad = NcdmNet::create(k, config.hidden1, config.hidden2);
  std::vector<double> net_grad_flat;

  PretrainResult result;
  double best = -1.0;
  int stale = 0;
  long step = 0;
  std::vector<double> theta(dim);

  auto evaluate = [&](const CdmBundle& bundle) {
    if (!valid.logs.empty()) {
      return heldout_accuracy(bundle, valid, config.valid_meta_frac, config.seed, config.valid_fit_steps,
                              config.valid_fit_lr);
    }
    return -1.0;
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng order_rng(stream_seed({config.seed, static_cast<std::uint64_t>(Stream::BatchOrder), 0xC0D,
                               static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[order_rng.index(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_hits = 0;
    for (std::size_t start = 0, batch = 0; start < rows.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t r = start; r < end; ++r) {
        const Row& row = rows[r];
        double* th_raw = model.theta.value.data() + row.examinee_slot * dim;
        double* th_grad = model.theta.grad.data() + row.examinee_slot * dim;
        double* ip = model.items.value.data() + row.question * item_width;
        double* ig = model.items.grad.data() + row.question * item_width;
        for (std::size_t d = 0; d < dim; ++d) theta[d] = sigmoid(th_raw[d]);

        double p;
        if (config.kind == CdmKind::IRT) {
          p = sigmoid(theta[0] - ip[0]);
          const double dz = p - row.label;
          th_grad[0] += dz * theta[0] * (1.0 - theta[0]);
          ig[0] -= dz;
        } else {
          NcdmItem item;
          item.concepts = model.concept_rows[row.question];
          item.difficulty.resize(k);
          for (std::size_t j = 0; j < k; ++j) item.difficulty[j] = sigmoid(ip[j]);
          item.discrimination = sigmoid(ip[k]);
          const auto f = ncdm_forward(model.net_view, theta, item);
          p = f.p;
          const auto dx = ncdm_backward(model.net_view, f, p - row.label, &net_grad);
          double ddisc = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            const double q = item.concepts[j];
            if (q == 0.0) continue;
            const double hd = item.difficulty[j];
            th_grad[j] += dx[j] * q * item.discrimination * theta[j] * (1.0 - theta[j]);
            ig[j] += -dx[j] * q * item.discrimination * hd * (1.0 - hd);
            ddisc += dx[j] * q * (theta[j] - hd);
          }
          ig[k] += ddisc * item.discrimination * (1.0 - item.discrimination);
        }
        for (std::size_t d = 0; d < dim; ++d) model.theta.touch(row.examinee_slot * dim + d);
        for (std::size_t j = 0; j < item_width; ++j) model.items.touch(row.question * item_width + j);
        const double loss = bce_loss(row.label, p);
        batch_loss += loss;
        epoch_hits += (p >= 0.5 ? 1 : 0) == row.label;
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("pretrain diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch));
      }
      epoch_loss += batch_loss;
      ++step;
      model.theta.step(config.optimizer, config.lr, scale, step);
      model.items.step(config.optimizer, config.lr, scale, step);
      if (config.kind == CdmKind::NCDM) {
        net_to_flat(net_grad, net_grad_flat);
        model.net.grad = net_grad_flat;
        model.net.touch_all();
        model.net.step(config.optimizer, config.lr, scale, step);
        flat_to_net(model.net.value, model.net_view);
        enforce_monotonicity(model.net_view);
        net_to_flat(model.net_view, model.net.value);
        for (auto& l : net_grad.layers) {
          std::fill(l.weight.begin(), l.weight.end(), 0.0);
          std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }
      }
    }

    CdmBundle bundle = model.to_bundle(train.num_concepts);
    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(rows.size());
    rec.train_accuracy = static_cast<double>(epoch_hits) / static_cast<double>(rows.size());
    const double va = evaluate(bundle);
    rec.valid_accuracy = va < 0.0 ? rec.train_accuracy : va;
    result.log.push_back(rec);
    result.final_valid_accuracy = rec.valid_accuracy;

    if (rec.valid_accuracy > best) {
      best = rec.valid_accuracy;
      result.best_epoch = epoch;
      result.best_valid_accuracy = best;
      result.bundle = std::move(bundle);
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

nlohmann::json bundle_to_json(const CdmBundle& bundle) {
  using nlohmann::json;
  json j;
  j["format"] = "dcat-cdm";
  j["version"] = 1;
  j["kind"] = to_string(bundle.kind);
  j["num_concepts"] = bundle.num_concepts;
  j["num_questions"] = bundle.items.size();
  json items = json::array();
  for (const auto& item : bundle.items) {
    if (const auto* irt = std::get_if<IrtItem>(&item)) {
      items.push_back({{"difficulty", irt->difficulty}});
    } else {
      const auto& n = std::get<NcdmItem>(item);
      items.push_back({{"concepts", n.concepts}, {"difficulty", n.difficulty}, {"discrimination", n.discrimination}});
    }
  }
  j["items"] = std::move(items);
  if (bundle.net) {
    json layers = json::array();
    for (const auto& l : bundle.net->layers) {
      layers.push_back({{"rows", l.rows}, {"cols", l.cols}, {"weight", l.weight}, {"bias", l.bias}});
    }
    j["net"] = {{"layers", std::move(layers)}};
  }
  j["init_raw"] = bundle.init_raw;
  return j;
}

CdmBundle bundle_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dcat-cdm") throw ConfigError("not a CDM checkpoint");
  CdmBundle b;
  b.kind = parse_cdm_kind(j.at("kind").get<std::string>());
  b.num_concepts = j.at("num_concepts").get<int>();
  for (const auto& it : j.at("items")) {
    if (b.kind == CdmKind::IRT) {
      b.items.emplace_back(IrtItem{it.at("difficulty").get<double>()});
    } else {
      NcdmItem n;
      n.concepts = it.at("concepts").get<std::vector<double>>();
      n.difficulty = it.at("difficulty").get<std::vector<double>>();
      n.discrimination = it.at("discrimination").get<double>();
      b.items.emplace_back(std::move(n));
    }
  }
  if (b.items.size() != j.at("num_questions").get<std::size_t>()) {
    throw ConfigError("checkpoint question count does not match its header");
  }
  if (j.contains("net")) {
    NcdmNet net;
    const auto& layers = j.at("net").at("layers");
    if (layers.size() != 3) throw ConfigError("NCDM checkpoint must have 3 layers");
    for (std::size_t i = 0; i < 3; ++i) {
      auto& l = net.layers[i];
      l.rows = layers[i].at("rows").get<std::size_t>();
      l.cols = layers[i].at("cols").get<std::size_t>();
      l.weight = layers[i].at("weight").get<std::vector<double>>();
      l.bias = layers[i].at("bias").get<std::vector<double>>();
      if (l.weight.size() != l.rows * l.cols || l.bias.size() != l.rows) {
        throw ConfigError("NCDM layer " + std::to_string(i) + " does not match its shape header");
      }
    }
    b.net = std::move(net);
  }
  if (b.kind == CdmKind::NCDM && !b.net) throw ConfigError("NCDM checkpoint without network");
  b.init_raw = j.value("init_raw", std::vector<double>{});
  return b;
}

void save_bundle(const CdmBundle& bundle, const std::filesystem::path& path) {
  write_file_atomic(path, bundle_to_json(bundle).dump() + "\n");
}

CdmBundle load_bundle(const std::filesystem::path& path) {
  return bundle_from_json(nlohmann::json::parse(read_file(path)));
}

std::uint64_t parameter_hash(const CdmBundle& bundle) {
  std::uint64_t h = fnv1a(to_string(bundle.kind));
  for (const auto& item : bundle.items) {
    if (const auto* irt = std::get_if<IrtItem>(&item)) {
      h = fnv1a_doubles(&irt->difficulty, 1, h);
    } else {
      const auto& n = std::get<NcdmItem>(item);
      h = fnv1a_doubles(n.concepts.data(), n.concepts.size(), h);
      h = fnv1a_doubles(n.difficulty.data(), n.difficulty.size(), h);
      h = fnv1a_doubles(&n.discrimination, 1, h);
    }
  }
  if (bundle.net) {
    for (const auto& l : bundle.net->layers) {
      h = fnv1a_doubles(l.weight.data(), l.weight.size(), h);
      h = fnv1a_doubles(l.bias.data(), l.bias.size(), h);
    }
  }
  return h;
}

}  // namespace dcat
