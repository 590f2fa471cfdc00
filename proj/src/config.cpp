#include "dcat/config.hpp"

#include <fstream>
#include <set>

#include "dcat/common.hpp"
#include "dcat/debias.hpp"
#include "dcat/io.hpp"

namespace dcat {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + where + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adam") return Optimizer::Adam;
  if (s == "sgd") return Optimizer::Sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (min_interactions < 1) throw ConfigError("min_interactions must be >= 1");
  double sum = 0.0;
  for (double r : split_ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (out.empty()) throw ConfigError("out must not be empty");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (pretrain.epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (pretrain.patience < 1) throw ConfigError("pretrain.patience must be >= 1");
  if (pretrain.hidden1 < 1 || pretrain.hidden2 < 1) throw ConfigError("pretrain hidden sizes must be >= 1");
  train.validate();
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j,
                 {"data", "cdm", "min_interactions", "split_seed", "split_ratios", "out", "cdm_checkpoint",
                  "policy_checkpoint", "ood", "pretrain", "train"},
                 "");
  read(j, "data", c.data, "");
  if (j.contains("cdm")) {
    std::string kind;
    read(j, "cdm", kind, "");
    c.cdm = parse_cdm_kind(kind);
  }
  read(j, "min_interactions", c.min_interactions, "");
  read(j, "split_seed", c.split_seed, "");
  read(j, "split_ratios", c.split_ratios, "");
  read(j, "out", c.out, "");
  read(j, "cdm_checkpoint", c.cdm_checkpoint, "");
  read(j, "policy_checkpoint", c.policy_checkpoint, "");
  read(j, "ood", c.ood, "");

  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    const std::string w = "pretrain.";
    reject_unknown(p, {"optimizer", "lr", "batch_size", "epochs", "patience", "hidden1", "hidden2", "seed"}, w);
    if (p.contains("optimizer")) {
      std::string o;
      read(p, "optimizer", o, w);
      c.pretrain.optimizer = parse_optimizer(o);
    }
    read(p, "lr", c.pretrain.lr, w);
    read(p, "batch_size", c.pretrain.batch_size, w);
    read(p, "epochs", c.pretrain.epochs, w);
    read(p, "patience", c.pretrain.patience, w);
    read(p, "hidden1", c.pretrain.hidden1, w);
    read(p, "hidden2", c.pretrain.hidden2, w);
    read(p, "seed", c.pretrain.seed, w);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string w = "train.";
    reject_unknown(t,
                   {"T", "k_steps", "lr_inner", "lr_outer", "omega", "mixup_alpha", "strategy", "epochs",
                    "batch_size", "patience", "seed", "meta_frac", "groupdro_eta", "irm_lambda", "per_step_updates",
                    "learned_init", "conflicting_only", "policy_hidden"},
                   w);
    auto& tc = c.train;
    read(t, "T", tc.steps, w);
    read(t, "k_steps", tc.k_steps, w);
    read(t, "lr_inner", tc.lr_inner, w);
    read(t, "lr_outer", tc.lr_outer, w);
    read(t, "omega", tc.omega, w);
    read(t, "mixup_alpha", tc.mixup_alpha, w);
    if (t.contains("strategy")) {
      std::string s;
      read(t, "strategy", s, w);
      tc.strategy = parse_strategy(s);
    }
    read(t, "epochs", tc.epochs, w);
    read(t, "batch_size", tc.batch_size, w);
    read(t, "patience", tc.patience, w);
    read(t, "seed", tc.seed, w);
    read(t, "meta_frac", tc.meta_frac, w);
    read(t, "groupdro_eta", tc.groupdro_eta, w);
    read(t, "irm_lambda", tc.irm_lambda, w);
    read(t, "per_step_updates", tc.per_step_updates, w);
    read(t, "learned_init", tc.learned_init, w);
    read(t, "conflicting_only", tc.conflicting_only, w);
    read(t, "policy_hidden", tc.policy_hidden, w);
  }
  c.pretrain.kind = c.cdm;
  c.pretrain.valid_meta_frac = c.train.meta_frac;
  return c;
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["data"] = c.data;
  j["cdm"] = to_string(c.cdm);
  j["min_interactions"] = c.min_interactions;
  j["split_seed"] = c.split_seed;
  j["split_ratios"] = c.split_ratios;
  j["out"] = c.out;
  j["cdm_checkpoint"] = c.cdm_checkpoint;
  j["policy_checkpoint"] = c.policy_checkpoint;
  j["ood"] = c.ood;
  auto& p = j["pretrain"];
  p["optimizer"] = c.pretrain.optimizer == Optimizer::Adam ? "adam" : "sgd";
  p["lr"] = c.pretrain.lr;
  p["batch_size"] = c.pretrain.batch_size;
  p["epochs"] = c.pretrain.epochs;
  p["patience"] = c.pretrain.patience;
  p["hidden1"] = c.pretrain.hidden1;
  p["hidden2"] = c.pretrain.hidden2;
  p["seed"] = c.pretrain.seed;
  auto& t = j["train"];
  const auto& tc = c.train;
  t["T"] = tc.steps;
  t["k_steps"] = tc.k_steps;
  t["lr_inner"] = tc.lr_inner;
  t["lr_outer"] = tc.lr_outer;
  t["omega"] = tc.omega;
  t["mixup_alpha"] = tc.mixup_alpha;
  t["strategy"] = to_string(tc.strategy);
  t["epochs"] = tc.epochs;
  t["batch_size"] = tc.batch_size;
  t["patience"] = tc.patience;
  t["seed"] = tc.seed;
  t["meta_frac"] = tc.meta_frac;
  t["groupdro_eta"] = tc.groupdro_eta;
  t["irm_lambda"] = tc.irm_lambda;
  t["per_step_updates"] = tc.per_step_updates;
  t["learned_init"] = tc.learned_init;
  t["conflicting_only"] = tc.conflicting_only;
  t["policy_hidden"] = tc.policy_hidden;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& c, const std::string& command) {
  auto j = config_to_json(c);
  j.erase("out");
  return fnv1a(command + "\n" + j.dump());
}

}  // namespace dcat
