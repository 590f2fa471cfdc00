#include "dcat/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dcat/common.hpp"
#include "dcat/config.hpp"
#include "dcat/dataset.hpp"
#include "dcat/eval.hpp"
#include "dcat/io.hpp"
#include "dcat/selector.hpp"
#include "dcat/synthetic.hpp"
#include "dcat/trainer.hpp"

namespace fs = std::filesystem;

namespace dcat {

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<double> omega;
  std::optional<double> mixup_alpha;
  std::optional<int> t;
  bool ood = false;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> cdm_checkpoint;
  std::optional<std::string> policy_checkpoint;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "training seed");
  cmd->add_option("--strategy", f.strategy, "ERM, IRM, GroupDRO, Reweight, MixupB, MixupSelf, MixupInner");
  cmd->add_option("--omega", f.omega, "synthetic loss weight");
  cmd->add_option("--mixup-alpha", f.mixup_alpha, "Beta(alpha, alpha) parameter");
  cmd->add_option("--t", f.t, "selection steps per episode");
  cmd->add_flag("--ood", f.ood, "label-balanced test meta sets");
  cmd->add_option("--out", f.out, "output root");
  cmd->add_option("--data", f.data, "interaction CSV");
  cmd->add_option("--cdm-checkpoint", f.cdm_checkpoint, "pre-trained CDM bundle");
  cmd->add_option("--policy-checkpoint", f.policy_checkpoint, "selection policy");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? config_from_json(nlohmann::json::object()) : load_config(f.config);
  if (f.seed) {
    c.train.seed = *f.seed;
    c.pretrain.seed = *f.seed;
  }
  if (f.strategy) c.train.strategy = parse_strategy(*f.strategy);
  if (f.omega) c.train.omega = *f.omega;
  if (f.mixup_alpha) c.train.mixup_alpha = *f.mixup_alpha;
  if (f.t) c.train.steps = *f.t;
  if (f.ood) c.ood = true;
  if (f.out) c.out = *f.out;
  if (f.data) c.data = *f.data;
  if (f.cdm_checkpoint) c.cdm_checkpoint = *f.cdm_checkpoint;
  if (f.policy_checkpoint) c.policy_checkpoint = *f.policy_checkpoint;
  c.validate();
  return c;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " not set");
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

struct Data {
  Corpus corpus;
  IndexMap index_map;
  ExamineeSplit split;
};

Data load_data(const RunConfig& c) {
  require_file(c.data, "data file");
  auto loaded = load_corpus(c.data);
  Data d;
  d.corpus = filter_min_interactions(loaded.corpus, c.min_interactions);
  d.index_map = std::move(loaded.index_map);
  d.split = split_examinees(d.corpus, c.split_ratios, c.split_seed);
  return d;
}

CdmBundle load_checked_bundle(const RunConfig& c, const Corpus& corpus) {
  require_file(c.cdm_checkpoint, "cdm checkpoint");
  auto bundle = load_bundle(c.cdm_checkpoint);
  if (bundle.items.size() != corpus.num_questions()) {
    throw ConfigError("cdm checkpoint covers " + std::to_string(bundle.items.size()) + " questions, data has " +
                      std::to_string(corpus.num_questions()));
  }
  return bundle;
}

fs::path run_dir(const RunConfig& c, const std::string& command) {
  fs::path dir = fs::path(c.out) / (command + "-" + hex64(config_hash(c, command)));
  fs::create_directories(dir);
  write_file_atomic(dir / "config.json", config_to_json(c).dump(2) + "\n");
  return dir;
}

std::string ids_json(const ExamineeSplit& s) {
  nlohmann::ordered_json j;
  j["train"] = s.train;
  j["valid"] = s.valid;
  j["test"] = s.test;
  return j.dump() + "\n";
}

int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const auto data = load_data(c);
  const auto res = pretrain(subset(data.corpus, data.split.train), subset(data.corpus, data.split.valid), c.pretrain);
  const auto dir = run_dir(c, "pretrain");
  save_bundle(res.bundle, dir / "cdm.json");
  std::string log;
  for (const auto& e : res.log) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_accuracy"] = e.train_accuracy;
    j["valid_accuracy"] = e.valid_accuracy;
    log += j.dump() + "\n";
  }
  write_file_atomic(dir / "pretrain_log.jsonl", log);
  write_file_atomic(dir / "split.json", ids_json(data.split));
  write_index_map(data.index_map, dir / "index_map.json");
  out << dir.string() << "\n";
  out << "best epoch " << res.best_epoch << " valid accuracy " << fixed(res.best_valid_accuracy, 4) << "\n";
  return 0;
}

struct TrainOutcome {
  fs::path dir;
  TrainResult result;
};

TrainOutcome train_into_dir(const RunConfig& c, const Data& data, const CdmBundle& bundle) {
  const auto dir = run_dir(c, "train");
  const auto before = parameter_hash(bundle);
  std::vector<TrainLogRecord> log;
  auto on_epoch = [&](const TrainLogRecord& rec, const SelectionPolicy& last, const SelectionPolicy& best) {
    log.push_back(rec);
    save_policy(last, dir / "policy_last.json");
    save_policy(best, dir / "policy.json");
    write_file_atomic(dir / "train_log.jsonl", log_to_jsonl(log));
  };
  auto res = train(data.corpus, data.split.train, data.split.valid, bundle, c.train, on_epoch);
  if (parameter_hash(bundle) != before) throw TrainingError("CDM parameters changed during policy training");
  save_policy(res.policy, dir / "policy.json");
  save_policy(res.last_policy, dir / "policy_last.json");
  write_file_atomic(dir / "train_log.jsonl", log_to_jsonl(res.log));
  nlohmann::ordered_json s;
  s["best_epoch"] = res.best_epoch;
  s["initial_valid_avg"] = res.initial_valid_avg;
  s["best_valid_avg"] = res.best_valid_avg;
  s["skipped_episodes"] = res.skipped_episodes;
  s["cdm_hash"] = hex64(before);
  s["policy_hash"] = hex64(policy_hash(res.policy));
  s["trajectory_hash"] = hex64(trajectory_hash(res.log));
  write_file_atomic(dir / "summary.json", s.dump(2) + "\n");
  return {dir, std::move(res)};
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto data = load_data(c);
  const auto bundle = load_checked_bundle(c, data.corpus);
  const auto t = train_into_dir(c, data, bundle);
  out << t.dir.string() << "\n";
  out << "best epoch " << t.result.best_epoch << " valid Avg. " << fixed(t.result.best_valid_avg, 4) << "\n";
  return 0;
}

EvalReport eval_test(const RunConfig& c, const Data& data, const CdmBundle& bundle, const SelectionPolicy& policy) {
  return evaluate_policy(data.corpus, data.split.test, bundle, policy, c.train.steps, c.ood, c.train).report;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const auto data = load_data(c);
  const auto bundle = load_checked_bundle(c, data.corpus);
  require_file(c.policy_checkpoint, "policy checkpoint");
  const auto policy = load_policy(c.policy_checkpoint);
  if (policy.num_questions != data.corpus.num_questions()) {
    throw ConfigError("policy checkpoint does not match the question pool");
  }
  const auto r = eval_test(c, data, bundle, policy);
  const auto dir = run_dir(c, "eval");
  write_report_files(r, dir);
  out << dir.string() << "\n" << format_summary(r) << "\n";
  return 0;
}

int cmd_analyze(const std::string& dir_arg, const std::optional<std::string>& out_arg, std::ostream& out) {
  const fs::path dir(dir_arg);
  const fs::path report_path = dir / "report.json";
  if (!fs::is_regular_file(report_path)) throw ConfigError("no report.json in " + dir.string());
  EvalReport r;
  try {
    r = report_from_json(nlohmann::json::parse(read_file(report_path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("unreadable report " + report_path.string() + ": " + e.what());
  }
  const fs::path dst = out_arg ? fs::path(*out_arg) : dir;
  fs::create_directories(dst);
  std::vector<RatioRecord> selected, meta;
  for (const auto& e : r.examinees) {
    selected.push_back({e.examinee_id, e.attribute, e.selected_ratio});
    meta.push_back({e.examinee_id, e.attribute, e.meta_ratio});
  }
  const auto sd = ratio_distribution(selected);
  const auto md = ratio_distribution(meta);
  write_file_atomic(dst / "selected_ratios.csv", ratios_csv(sd.records));
  write_file_atomic(dst / "meta_ratios.csv", ratios_csv(md.records));
  write_file_atomic(dst / "selected_hist.csv", histogram_csv(sd));
  write_file_atomic(dst / "meta_hist.csv", histogram_csv(md));
  out << dst.string() << "\n" << r.examinees.size() << " examinees\n";
  return 0;
}

int cmd_sweep(const RunConfig& c, const std::string& param, const std::vector<double>& values, std::ostream& out) {
  if (param != "omega" && param != "mixup_alpha") throw ConfigError("sweep parameter must be omega or mixup_alpha");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> runs;
  for (double v : values) {
    RunConfig r = c;
    (param == "omega" ? r.train.omega : r.train.mixup_alpha) = v;
    r.validate();
    runs.push_back(r);
  }
  const auto data = load_data(c);
  const auto bundle = load_checked_bundle(c, data.corpus);

  std::ostringstream csv;
  csv << "param,value,run_dir,best_epoch,valid_avg,test_worst,test_avg\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto t = train_into_dir(runs[i], data, bundle);
    const auto r = eval_test(runs[i], data, bundle, t.result.policy);
    write_report_files(r, t.dir);
    csv << param << "," << fixed(values[i], 4) << "," << t.dir.filename().string() << "," << t.result.best_epoch
        << "," << fixed(t.result.best_valid_avg, 6) << "," << fixed(r.worst, 6) << "," << fixed(r.avg, 6) << "\n";
    out << t.dir.string() << "\n";
  }
  RunConfig key = c;
  const auto dir = fs::path(c.out) / ("sweep-" + hex64(config_hash(key, "sweep:" + param + ":" + csv.str())));
  fs::create_directories(dir);
  write_file_atomic(dir / "sweep.csv", csv.str());
  write_file_atomic(dir / "config.json", config_to_json(c).dump(2) + "\n");
  out << dir.string() << "\n";
  return 0;
}

int cmd_generate(const SyntheticSpec& spec, const std::string& out_path, std::ostream& out) {
  if (spec.examinees < 1 || spec.questions < 1 || spec.concepts < 1 || spec.per_examinee < 1 ||
      spec.per_examinee > spec.questions) {
    throw ConfigError("generate: counts must be positive and per-examinee <= questions");
  }
  const auto s = generate_synthetic(spec);
  std::ostringstream csv;
  write_corpus_csv(s.corpus, csv);
  const fs::path p(out_path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file_atomic(p, csv.str());
  out << p.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"debiased data-driven CAT workbench", "dcat"};
  app.require_subcommand(1);

  Flags pf, tf, ef, sf;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "fit and freeze the CDM");
  add_common(pretrain_cmd, pf);
  auto* train_cmd = app.add_subcommand("train", "train the selection policy");
  add_common(train_cmd, tf);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy on the test examinees");
  add_common(eval_cmd, ef);

  auto* analyze_cmd = app.add_subcommand("analyze", "export ratio distributions of an eval run");
  std::string analyze_dir;
  std::optional<std::string> analyze_out;
  analyze_cmd->add_option("run_dir", analyze_dir, "eval run directory")->required();
  analyze_cmd->add_option("--out", analyze_out, "output directory (default: run_dir)");

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate over a grid of one hyperparameter");
  add_common(sweep_cmd, sf);
  std::string sweep_param = "omega";
  std::vector<double> sweep_values{0.2, 0.4, 0.6, 0.8, 1.0};
  sweep_cmd->add_option("--param", sweep_param, "omega or mixup_alpha");
  sweep_cmd->add_option("--values", sweep_values, "grid values")->delimiter(',');

  auto* gen_cmd = app.add_subcommand("generate", "write a synthetic 1PL corpus");
  SyntheticSpec spec;
  std::string gen_out;
  gen_cmd->add_option("--out", gen_out, "CSV path")->required();
  gen_cmd->add_option("--seed", spec.seed);
  gen_cmd->add_option("--examinees", spec.examinees);
  gen_cmd->add_option("--questions", spec.questions);
  gen_cmd->add_option("--concepts", spec.concepts);
  gen_cmd->add_option("--per-examinee", spec.per_examinee);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*pretrain_cmd) return cmd_pretrain(resolve(pf), out);
    if (*train_cmd) return cmd_train(resolve(tf), out);
    if (*eval_cmd) return cmd_eval(resolve(ef), out);
    if (*analyze_cmd) return cmd_analyze(analyze_dir, analyze_out, out);
    if (*sweep_cmd) return cmd_sweep(resolve(sf), sweep_param, sweep_values, out);
    if (*gen_cmd) return cmd_generate(spec, gen_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dcat
