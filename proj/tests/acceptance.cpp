// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcat/cdm.hpp"
#include "dcat/cli.hpp"
#include "dcat/common.hpp"
#include "dcat/dataset.hpp"
#include "dcat/debias.hpp"
#include "dcat/eval.hpp"
#include "dcat/io.hpp"
#include "dcat/kernels.hpp"
#include "dcat/selector.hpp"
#include "dcat/synthetic.hpp"
#include "dcat/trainer.hpp"
#include "directional.hpp"
#include "oracles.hpp"
#include "toy_pool.hpp"

using namespace dcat;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kFdStep = 1e-5;
constexpr double kGradRelErr = 1e-4;
constexpr int kGradInstances = 50;
constexpr double kGradSeconds = 10.0;
constexpr int kMonotoneProbes = 100;
constexpr double kMonotoneTol = -1e-9;
constexpr int kMixupSamples = 10000;
constexpr int kDegeneracyExaminees = 50;
constexpr double kMetricTol = 1e-12;
constexpr int kToyUpdates = 200;
constexpr double kToyProb = 0.9;
constexpr double kToySeconds = 30.0;
constexpr int kSeeds = 5;
constexpr int kSeedsNeeded = 4;
constexpr double kWorstGain = 0.02;
constexpr double kAvgDrop = 0.02;
constexpr double kDirectionalSeconds = 600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double vec_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max(std::sqrt(na), std::sqrt(nb));
  return den == 0.0 ? std::sqrt(d) : std::sqrt(d) / den;
}

// ---------------------------------------------------------------------------

void gradient_correctness() {
  const auto t0 = Clock::now();
  double worst_irt = 0.0, worst_ncdm = 0.0, worst_pol = 0.0;
  for (int s = 0; s < kGradInstances; ++s) {
    Rng rng(stream_seed({0xA1, static_cast<std::uint64_t>(s)}));

    const auto irt = oracle::irt_bundle({rng.normal()});
    ProficiencyState st1{{rng.normal() * 2.0}};
    const int y1 = static_cast<int>(rng.index(2));
    const auto g1 = grad_theta(irt, st1, irt.items[0], y1);
    const double b = std::get<IrtItem>(irt.items[0]).difficulty;
    const double fd1 = oracle::central_diff(st1.raw, 0, kFdStep, [&] {
      return oracle::bce(y1, oracle::sig(oracle::sig(st1.raw[0]) - b));
    });
    worst_irt = std::max(worst_irt, vec_rel_err(g1, {fd1}));

    const std::size_t k = 2 + rng.index(9);
    const auto nb = oracle::random_ncdm_bundle(k, 1, rng(), 32, 16);
    ProficiencyState st{std::vector<double>(k)};
    for (auto& r : st.raw) r = rng.normal();
    const int y = static_cast<int>(rng.index(2));
    const auto g = grad_theta(nb, st, nb.items[0], y);
    std::vector<double> fd(k);
    for (std::size_t c = 0; c < k; ++c) {
      fd[c] = oracle::central_diff(st.raw, c, kFdStep, [&] {
        return oracle::bce(y, oracle::ncdm_p(*nb.net, std::get<NcdmItem>(nb.items[0]), st.theta()));
      });
    }
    worst_ncdm = std::max(worst_ncdm, vec_rel_err(g, fd));

    // Policy: gradient of sum_t log pi(q_t | s_t) over a short rollout.
    const std::size_t nq = 6 + rng.index(6);
    auto pol = SelectionPolicy::create(nq, 8, rng());
    for (auto& w : pol.w_out) w = rng.normal() * 0.5;
    for (auto& w : pol.b_out) w = rng.normal() * 0.5;
    std::vector<Response> hist;
    std::vector<char> allowed(nq, 1);
    std::vector<std::pair<std::vector<std::int8_t>, std::vector<char>>> steps;
    std::vector<int> picks;
    for (int t = 0; t < 3; ++t) {
      const auto state = encode_state(hist, nq);
      SelectionMask m{allowed};
      const int q = select_question(pol, state, m, SelectMode::Sample, rng);
      steps.push_back({state.entries, allowed});
      picks.push_back(q);
      allowed[q] = 0;
      hist.push_back({q, static_cast<int>(rng.index(2))});
    }
    auto grad = SelectionPolicy::zeros_like(pol);
    for (std::size_t t = 0; t < steps.size(); ++t) {
      accumulate_log_prob_grad(pol, StateVector{steps[t].first}, SelectionMask{steps[t].second}, picks[t], 1.0, grad);
    }
    auto total = [&] {
      double s = 0.0;
      for (std::size_t t = 0; t < steps.size(); ++t)
        s += oracle::log_softmax_at(oracle::policy_logits(pol, steps[t].first), steps[t].second, picks[t]);
      return s;
    };
    std::vector<double> ga, gf;
    std::vector<std::vector<double>*> params{&pol.w_in, &pol.b_in, &pol.w_out, &pol.b_out};
    std::vector<const std::vector<double>*> grads{&grad.w_in, &grad.b_in, &grad.w_out, &grad.b_out};
    for (std::size_t a = 0; a < params.size(); ++a) {
      for (std::size_t i = 0; i < params[a]->size(); ++i) {
        ga.push_back((*grads[a])[i]);
        gf.push_back(oracle::central_diff(*params[a], i, kFdStep, total));
      }
    }
    worst_pol = std::max(worst_pol, vec_rel_err(ga, gf));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_irt < kGradRelErr && worst_ncdm < kGradRelErr && worst_pol < kGradRelErr && secs < kGradSeconds;
  std::ostringstream d;
  d << kGradInstances << " instances each, max relative error IRT " << fmt("%.2e", worst_irt) << ", NCDM "
    << fmt("%.2e", worst_ncdm) << ", policy " << fmt("%.2e", worst_pol) << " (limit " << kGradRelErr << "), "
    << fmt("%.2f", secs) << " s";
  verdict("gradient correctness", ok, d.str());
}

void ncdm_monotonicity() {
  int violations = 0;
  double min_delta = 1e300;
  for (int s = 0; s < kMonotoneProbes; ++s) {
    Rng rng(stream_seed({0xA2, static_cast<std::uint64_t>(s)}));
    auto b = oracle::random_ncdm_bundle(10, 1, rng(), 16, 8);
    for (auto& l : b.net->layers)
      for (auto& w : l.weight) w = rng.normal();
    enforce_monotonicity(*b.net);
    std::vector<double> th(10), up(10);
    for (int c = 0; c < 10; ++c) {
      th[c] = rng.uniform();
      up[c] = std::min(1.0, th[c] + (rng.uniform() < 0.5 ? rng.uniform() * (1.0 - th[c]) : 0.0));
    }
    const double delta = predict(b, up, b.items[0]) - predict(b, th, b.items[0]);
    min_delta = std::min(min_delta, delta);
    violations += delta < kMonotoneTol;
  }
  verdict("NCDM monotonicity", violations == 0,
          std::to_string(kMonotoneProbes) + " probes, min p(theta') - p(theta) = " + fmt("%.3e", min_delta) +
              ", violations " + std::to_string(violations));
}

bool within(double v, double a, double b) { return v >= std::min(a, b) && v <= std::max(a, b); }

bool convex(const ItemParams& m, const ItemParams& a, const ItemParams& b) {
  if (const auto* x = std::get_if<IrtItem>(&m)) {
    return within(x->difficulty, std::get<IrtItem>(a).difficulty, std::get<IrtItem>(b).difficulty);
  }
  const auto& x = std::get<NcdmItem>(m);
  const auto& p = std::get<NcdmItem>(a);
  const auto& q = std::get<NcdmItem>(b);
  bool ok = within(x.discrimination, p.discrimination, q.discrimination);
  for (std::size_t k = 0; k < x.concepts.size(); ++k) {
    ok = ok && within(x.concepts[k], p.concepts[k], q.concepts[k]) &&
         within(x.difficulty[k], p.difficulty[k], q.difficulty[k]);
  }
  return ok;
}

void mixup_identities() {
  const auto bundle = oracle::random_ncdm_bundle(6, 80, 0xA3);
  bool endpoints = true, midpoints = true;
  for (std::size_t i = 0; i + 1 < bundle.items.size(); ++i) {
    const auto& a = bundle.items[i];
    const auto& b = bundle.items[i + 1];
    endpoints = endpoints && mixup_item(a, b, 1.0) == a && mixup_item(a, b, 0.0) == b;
    const auto m = std::get<NcdmItem>(mixup_item(a, b, 0.5));
    const auto& p = std::get<NcdmItem>(a);
    const auto& q = std::get<NcdmItem>(b);
    midpoints = midpoints && m.discrimination == (p.discrimination + q.discrimination) / 2;
    for (std::size_t k = 0; k < m.concepts.size(); ++k) {
      midpoints = midpoints && m.concepts[k] == (p.concepts[k] + q.concepts[k]) / 2 &&
                  m.difficulty[k] == (p.difficulty[k] + q.difficulty[k]) / 2;
    }
  }

  // Seeded batches until 10,000 synthetic samples have been checked.
  std::size_t n = 0, bad_label = 0, bad_convex = 0;
  std::uint64_t round = 0;
  const Strategy kinds[] = {Strategy::MixupB, Strategy::MixupSelf, Strategy::MixupInner};
  while (n < static_cast<std::size_t>(kMixupSamples)) {
    Rng rng(stream_seed({0xA3, round}));
    std::vector<std::vector<Interaction>> metas(24);
    std::vector<BatchMember> batch;
    for (int e = 0; e < 24; ++e) {
      const auto attr = static_cast<Attribute>(e % 3);
      for (int j = 0; j < 8; ++j) {
        metas[e].push_back({e, static_cast<int>(rng.index(bundle.items.size())), static_cast<int>(rng.index(2))});
      }
      std::vector<double> th(6);
      for (auto& t : th) t = rng.uniform();
      batch.push_back({e, attr, th, &metas[e]});
    }
    MixupConfig cfg;
    cfg.alpha = 0.2 + rng.uniform();
    cfg.conflicting_only = round % 2 == 0;
    for (const auto& s : synthesize(kinds[round % 3], bundle, batch, cfg, rng())) {
      ++n;
      bad_label += s.label != s.source_i.label || s.label != s.source_j.label;
      bad_convex += !convex(s.item, bundle.items[s.source_i.question_id], bundle.items[s.source_j.question_id]) ||
                    s.lambda < 0.0 || s.lambda > 1.0;
    }
    ++round;
  }
  const bool ok = endpoints && midpoints && bad_label == 0 && bad_convex == 0;
  std::ostringstream d;
  d << "endpoints " << (endpoints ? "exact" : "differ") << ", midpoints " << (midpoints ? "exact" : "differ") << ", "
    << n << " samples: " << bad_label << " label violations, " << bad_convex << " convexity violations";
  verdict("Mixup identities", ok, d.str());
}

struct SmallWorld {
  Corpus corpus;
  ExamineeSplit split;
  CdmBundle bundle;
};

SmallWorld small_world(int examinees, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.examinees = examinees;
  spec.seed = seed;
  SmallWorld w;
  w.corpus = generate_synthetic(spec).corpus;
  w.split = split_examinees(w.corpus, {0.6, 0.2, 0.2}, seed);
  PretrainConfig pc;
  pc.lr = 0.02;
  pc.epochs = 20;
  pc.seed = seed;
  w.bundle = pretrain(subset(w.corpus, w.split.train), subset(w.corpus, w.split.valid), pc).bundle;
  return w;
}

void strategy_degeneracy() {
  const auto w = small_world(kDegeneracyExaminees, 0xA4);
  TrainConfig erm;
  erm.epochs = 5;
  erm.batch_size = 8;
  erm.lr_outer = 0.05;
  erm.seed = 0xA4;
  erm.patience = 5;
  auto mix = erm;
  mix.strategy = Strategy::MixupB;
  mix.omega = 0.0;
  const auto a = train(w.corpus, w.split.train, w.split.valid, w.bundle, erm);
  const auto b = train(w.corpus, w.split.train, w.split.valid, w.bundle, mix);
  const auto ha = trajectory_hash(a.log), hb = trajectory_hash(b.log);
  verdict("strategy degeneracy", ha == hb && a.last_policy == b.last_policy,
          "ERM " + hex64(ha) + " vs MixupB(omega=0) " + hex64(hb) + " over " + std::to_string(a.log.size()) +
              " epochs, final policies " + (a.last_policy == b.last_policy ? "equal" : "differ"));
}

void ood_partitioner() {
  SyntheticSpec spec;
  spec.examinees = 600;
  spec.per_examinee = 40;
  spec.ability_sd = 1.0;  // wide spread so some logs are all-correct or all-incorrect
  spec.seed = 0xA5;
  const auto corpus = generate_synthetic(spec).corpus;
  std::size_t retained = 0, excluded = 0, bad = 0;
  for (const auto& log : corpus.logs) {
    const int c = log.correct(), wr = log.size() - c;
    const int m = ood_pairs(log.size(), 0.2);
    const auto s = build_ood_meta(log, 0.2, 0xA5);
    if (!s) {
      ++excluded;
      bad += std::min(c, wr) >= m;
      continue;
    }
    ++retained;
    int mc = 0;
    for (const auto& x : s->meta) mc += x.label;
    const int mw = static_cast<int>(s->meta.size()) - mc;
    bad += mc != mw || mc != m || s->meta.size() + s->support.size() != log.items.size();
  }
  verdict("OOD partitioner", bad == 0 && retained > 0 && excluded > 0,
          std::to_string(retained) + " retained, " + std::to_string(excluded) + " excluded, " + std::to_string(bad) +
              " violations");
}

void metric_identities() {
  std::size_t reports = 0, bad = 0;
  double worst_gap = 0.0;
  auto check = [&](const EvalReport& r, std::size_t meta_total) {
    ++reports;
    double weighted = 0.0;
    std::size_t total = 0;
    for (const auto& g : r.groups.groups) {
      weighted += g.accuracy * static_cast<double>(g.count);
      total += g.count;
    }
    const double gap = total ? std::abs(r.avg - weighted / static_cast<double>(total)) : 0.0;
    worst_gap = std::max(worst_gap, gap);
    bad += r.worst > r.avg || gap > kMetricTol || total != meta_total;
  };

  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(stream_seed({0xA6, s}));
    std::vector<Prediction> p(1 + rng.index(400));
    const std::size_t groups = 1 + rng.index(kNumGroups);
    for (auto& x : p) {
      const auto g = GroupKey::from_index(static_cast<int>(rng.index(groups)));
      x = {g, static_cast<int>(rng.index(2)), g.label};
    }
    check(report(p, 5, false), p.size());
  }

  const auto w = small_world(90, 0xA6);
  TrainConfig cfg;
  cfg.seed = 0xA6;
  const auto policy = SelectionPolicy::create(w.corpus.num_questions(), 32, 0xA6);
  for (bool ood : {false, true}) {
    for (int t : {5, 10}) {
      const auto r = evaluate_policy(w.corpus, w.split.test, w.bundle, policy, t, ood, cfg).report;
      std::size_t meta = 0;
      for (const auto& e : r.examinees) {
        const auto& log = w.corpus.log(e.examinee_id);
        meta += ood ? build_ood_meta(log, cfg.meta_frac, cfg.seed)->meta.size()
                    : resplit_support_meta(log, cfg.meta_frac, cfg.seed, 0).meta.size();
      }
      check(r, meta);
    }
  }
  verdict("metric identities", bad == 0,
          std::to_string(reports) + " reports, max |avg - weighted group mean| = " + fmt("%.2e", worst_gap) + ", " +
              std::to_string(bad) + " violations");
}

void policy_learning() {
  const auto t0 = Clock::now();
  int passed = 0;
  std::ostringstream d;
  testing::ToyPoolParams tp;
  tp.updates = kToyUpdates;
  for (int s = 1; s <= kSeeds; ++s) {
    const auto probs = testing::run_toy_pool(static_cast<std::uint64_t>(s), tp);
    passed += probs.back() > kToyProb;
    d << (s > 1 ? " " : "") << fmt("%.3f", probs.back());
  }
  const double secs = seconds_since(t0);
  verdict("policy learning", passed >= kSeedsNeeded && secs < kToySeconds,
          "greedy probability of the better question after " + std::to_string(kToyUpdates) + " updates: " + d.str() +
              " (" + std::to_string(passed) + "/" + std::to_string(kSeeds) + " above " + fmt("%.1f", kToyProb) + "), " +
              fmt("%.2f", secs) + " s");
}

void directional_and_shift() {
  const auto t0 = Clock::now();
  int gains = 0, closer = 0;
  bool avg_ok = true;
  std::ostringstream d1, d2;
  for (int s = 1; s <= kSeeds; ++s) {
    const auto o = testing::run_directional(testing::default_directional(static_cast<std::uint64_t>(s)));
    const double dw = o.debiased.worst - o.erm.worst;
    const double da = o.debiased.avg - o.erm.avg;
    gains += dw >= kWorstGain;
    avg_ok = avg_ok && da >= -kAvgDrop;
    d1 << " [seed " << s << " dWorst " << fmt("%+.3f", dw) << " dAvg " << fmt("%+.3f", da) << "]";

    bool seed_closer = true;
    for (int k : {0, 2}) {
      const double em = std::abs(o.erm.selected_ratio[k] - o.erm.meta_ratio[k]);
      const double mm = std::abs(o.debiased.selected_ratio[k] - o.debiased.meta_ratio[k]);
      seed_closer = seed_closer && mm < em;
      d2 << (k == 0 ? " [seed " + std::to_string(s) + " A " : " C ") << fmt("%.3f", o.debiased.selected_ratio[k])
         << " vs " << fmt("%.3f", o.erm.selected_ratio[k]) << " (meta " << fmt("%.2f", o.erm.meta_ratio[k])
         << (k == 2 ? ")]" : ")");
    }
    closer += seed_closer;
  }
  const double secs = seconds_since(t0);
  verdict("directional debiasing",
          gains >= kSeedsNeeded && avg_ok && secs < kDirectionalSeconds,
          std::to_string(gains) + "/" + std::to_string(kSeeds) + " seeds with Worst@10 gain >= " +
              fmt("%.2f", kWorstGain) + ", Avg@10 drop within " + fmt("%.2f", kAvgDrop) + ": " +
              (avg_ok ? "yes" : "no") + "," + d1.str() + ", " + fmt("%.0f", secs) + " s");
  verdict("distribution shift", closer >= kSeedsNeeded,
          std::to_string(closer) + "/" + std::to_string(kSeeds) +
              " seeds with MixupB selected ratios closer to the meta ratio for both A and C (MixupB vs ERM):" +
              d2.str());
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

int cli(std::vector<std::string> args, std::string* first_line = nullptr) {
  args.insert(args.begin(), "dcat");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (first_line) *first_line = o.str().substr(0, o.str().find('\n'));
  return code;
}

void determinism() {
  const fs::path root = fs::temp_directory_path() / "dcat_acceptance_determinism";
  auto pipeline = [&]() -> int {
    fs::remove_all(root);
    fs::create_directories(root);
    {
      std::ofstream cfg(root / "config.json");
      cfg << R"({"min_interactions": 20, "split_seed": 3, "cdm": "NCDM",
                 "pretrain": {"epochs": 3, "lr": 0.005, "hidden1": 16, "hidden2": 8},
                 "train": {"epochs": 2, "batch_size": 8, "policy_hidden": 32, "lr_outer": 0.05}})";
    }
    const auto r = root.string();
    const std::vector<std::string> common{"--config", r + "/config.json", "--data", r + "/data.csv", "--out",
                                          r + "/runs", "--seed", "7"};
    auto with = [&](std::vector<std::string> head, std::vector<std::string> tail = {}) {
      head.insert(head.end(), common.begin(), common.end());
      head.insert(head.end(), tail.begin(), tail.end());
      return head;
    };
    int rc = cli({"generate", "--out", r + "/data.csv", "--examinees", "60", "--seed", "7"});
    std::string pre, tr, ev;
    rc |= cli(with({"pretrain"}), &pre);
    rc |= cli(with({"train"}, {"--cdm-checkpoint", pre + "/cdm.json", "--strategy", "MixupB"}), &tr);
    rc |= cli(with({"eval"}, {"--cdm-checkpoint", pre + "/cdm.json", "--policy-checkpoint", tr + "/policy.json",
                              "--strategy", "MixupB", "--ood", "--t", "10"}),
              &ev);
    rc |= cli({"analyze", ev});
    return rc;
  };
  const int rc1 = pipeline();
  const auto first = snapshot(root);
  const int rc2 = pipeline();
  const auto second = snapshot(root);
  fs::remove_all(root);
  std::size_t differing = 0;
  for (const auto& [k, v] : first) {
    auto it = second.find(k);
    differing += it == second.end() || it->second != v;
  }
  differing += second.size() != first.size();
  verdict("determinism", rc1 == 0 && rc2 == 0 && differing == 0 && first.size() > 10,
          std::to_string(first.size()) + " files from generate/pretrain/train/eval/analyze, " +
              std::to_string(differing) + " differ between reruns");
}

}  // namespace

int main() {
  std::printf("kernels: %s\n", std::string(kernels::isa_name(kernels::active_isa())).c_str());
  const std::vector<std::function<void()>> criteria{gradient_correctness, ncdm_monotonicity, mixup_identities,
                                                    strategy_degeneracy,  ood_partitioner,   metric_identities,
                                                    policy_learning,      directional_and_shift, determinism};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      verdict("criterion raised", false, e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
