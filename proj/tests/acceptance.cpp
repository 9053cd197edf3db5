#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsre/bat.hpp"
#include "dsre/commands.hpp"
#include "dsre/config.hpp"
#include "dsre/gradcheck.hpp"
#include "dsre/ivat.hpp"
#include "dsre/metrics.hpp"
#include "dsre/random.hpp"
#include "dsre/trainer.hpp"

namespace fs = std::filesystem;
using namespace dsre;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s [%d] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---- tiny model used by the analytic criteria ------------------------------------

ModelConfig tiny_config() {
  ModelConfig c;
  c.featurizer.word_dim = 4;
  c.featurizer.pos_dim = 2;
  c.featurizer.max_len = 8;
  c.featurizer.max_distance = 5;
  c.encoder.kernel_width = 3;
  c.encoder.kernels = 6;
  c.n_relations = 3;
  return c;
}

constexpr std::size_t kVocab = 10;

FeaturizedInstance random_instance(const ModelConfig& c, Rng& rng) {
  const std::size_t l = c.featurizer.max_len;
  FeaturizedInstance f;
  f.length = 2 + rng.index(l - 1);
  f.head = rng.index(f.length);
  do {
    f.tail = rng.index(f.length);
  } while (f.tail == f.head);
  f.word_ids.assign(l, Vocab::kPad);
  f.pos1_ids.assign(l, 0);
  f.pos2_ids.assign(l, 0);
  f.mask.assign(l, 0);
  const int off = c.featurizer.max_distance + 1;
  for (std::size_t i = 0; i < f.length; ++i) {
    const int ti = static_cast<int>(i);
    f.word_ids[i] = 1 + static_cast<int>(rng.index(kVocab - 1));
    f.pos1_ids[i] = relative_distance(ti, static_cast<int>(f.head), c.featurizer.max_distance) + off;
    f.pos2_ids[i] = relative_distance(ti, static_cast<int>(f.tail), c.featurizer.max_distance) + off;
    f.mask[i] = 1;
  }
  return f;
}

FeaturizedBag random_bag(const ModelConfig& c, Rng& rng, std::size_t size, int relation) {
  FeaturizedBag b;
  for (std::size_t i = 0; i < size; ++i) b.instances.push_back(random_instance(c, rng));
  b.relations = {relation};
  b.pair = "pair" + std::to_string(rng.index(1000000));
  return b;
}

ModelParams tiny_model(std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::init(tiny_config(), kVocab, rng);
  for (double& v : p.attention.bias.value.values()) v = rng.uniform(-0.3, 0.3);
  for (double& v : p.attention.diag.value.values()) v = rng.uniform(0.5, 1.5);
  for (double& v : p.encoder.bias.value.values()) v = rng.uniform(-0.3, 0.3);
  return p;
}

// ---- 1 ------------------------------------------------------------------------------

Outcome gradient_correctness() {
  ModelParams p = tiny_model(7);
  Rng rng(7);
  const std::vector<FeaturizedBag> batch{random_bag(p.config, rng, 3, 1), random_bag(p.config, rng, 2, 2)};
  TrainConfig cfg;
  cfg.model = p.config;
  cfg.variant = Variant::parse("ivat+bat");
  cfg.ivat.threshold = 0.45;
  cfg.ivat.epsilon = 0.5;
  cfg.ivat.beta = 0.8;
  cfg.bat.epsilon = 0.3;
  cfg.bat.beta = 1.2;
  StepPlan plan;
  {
    Rng probe(3);
    ag::Graph g;
    build_step(g, p, batch, cfg, live_planner(p, batch, cfg, probe, nullptr, &plan));
  }
  if (plan.instances.empty() || plan.bags.empty()) return {false, "fixture selects no regularized items"};
  const GradCheckReport rep = finite_diff_check(
      [&](ag::Graph& g) { return build_step(g, p, batch, cfg, fixed_planner(plan)).total; }, p.parameters(), 1e-5);
  std::ostringstream d;
  d << "max rel err " << fmt("%.2e", rep.max_rel_error) << " over " << rep.checked << " coordinates of 9 tensors, "
    << rep.skipped.size() << " tie coordinates skipped, " << plan.instances.size() << " smoothed instances";
  return {rep.max_rel_error < 1e-4 && rep.checked > 0, d.str()};
}

// ---- 2 ------------------------------------------------------------------------------

Outcome power_iteration_fidelity() {
  const Tensor w(3, 2, std::vector<double>{2.0, 0.1, -1.5, 0.3, 0.2, -0.4});
  const Tensor b = Tensor::row_vector({0.1, -0.2, 0.05});
  const Tensor x = Tensor::row_vector({0.3, -0.2});
  Tensor p_clean;
  {
    ag::Graph g;
    p_clean = ag::softmax(ag::linear(g.constant(x), g.constant(w), g.constant(b))).value();
  }
  auto grad_at = [&](const Tensor& r) {
    ag::Graph g;
    ag::Var probe = g.input(r);
    ag::Var logq = ag::log_softmax(ag::linear(ag::add(g.constant(x), probe), g.constant(w), g.constant(b)));
    g.backward(ag::kl_div(g.constant(p_clean), logq));
    return g.grad(probe);
  };
  double f00 = 0, f01 = 0, f11 = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double c = (i == j ? p_clean[i] : 0.0) - p_clean[i] * p_clean[j];
      f00 += w(i, 0) * c * w(j, 0);
      f01 += w(i, 0) * c * w(j, 1);
      f11 += w(i, 1) * c * w(j, 1);
    }
  }
  const double tr = f00 + f11, det = f00 * f11 - f01 * f01;
  const double disc = std::sqrt(tr * tr / 4.0 - det);
  const double l1 = tr / 2.0 + disc, l2 = tr / 2.0 - disc;
  const Tensor v = Tensor::row_vector({f01, l1 - f00});
  auto cosine = [&](const Tensor& d) { return std::abs(dot(d, v)) / (l2_norm(d) * l2_norm(v)); };
  const Tensor d0 = scale_to_norm(Tensor::row_vector({1.0, 1.0}), 1.0);
  const double c1 = cosine(power_iteration(d0, grad_at, 1e-6, 1).direction);
  const double c2 = cosine(power_iteration(d0, grad_at, 1e-6, 2).direction);
  std::ostringstream d;
  d << "eigenvalue ratio " << fmt("%.2f", l1 / l2) << ", cos K=1 " << fmt("%.6f", c1) << ", cos K=2 "
    << fmt("%.6f", c2);
  return {l1 / l2 >= 4.0 && c1 >= 0.9 && c2 >= c1, d.str()};
}

// ---- 3 ------------------------------------------------------------------------------

Outcome perturbation_norms() {
  std::size_t vadv = 0, adv = 0, flat = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    ModelParams p = tiny_model(10000 + seed);
    Rng rng(seed);
    const FeaturizedBag bag = random_bag(p.config, rng, 1 + rng.index(4), static_cast<int>(rng.index(3)));
    ag::Graph g(ag::Mode::Frozen);
    const BagForward f = forward_bag(BoundModel::bind(g, std::as_const(p)), bag, bag.relations[0]);

    IvatConfig ic;
    ic.epsilon = rng.uniform(0.01, 5.0);
    ic.power_iterations = 1 + static_cast<int>(rng.index(3));
    const std::size_t i = rng.index(bag.instances.size());
    PerturbationStats s1;
    const Tensor dv = estimate_vadv(p, f.inputs[i].value(), bag.instances[i], clean_distribution(p, bag.instances[i]),
                                    ic, rng, &s1);
    if (s1.flat == 0) {
      worst = std::max(worst, std::abs(l2_norm(dv) - ic.epsilon));
      ++vadv;
    }
    const double eps = rng.uniform(0.01, 5.0);
    PerturbationStats s2;
    const Tensor da = estimate_adv(p, f.z.value(), bag.relations[0], eps, &s2);
    if (s2.flat == 0) {
      worst = std::max(worst, std::abs(l2_norm(da) - eps));
      ++adv;
    }
    flat += s1.flat + s2.flat;
  }
  std::ostringstream d;
  d << vadv << " d_v-adv + " << adv << " d_adv checked, " << flat << " flat, max | ||d|| - eps | "
    << fmt("%.2e", worst);
  return {vadv + adv >= 1000 && worst <= 1e-9, d.str()};
}

// ---- 4 ------------------------------------------------------------------------------

Outcome attention_invariants() {
  double worst_sum = 0.0, worst_shift = 0.0;
  bool singleton_exact = true;
  std::size_t bags = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    ModelParams p = tiny_model(20000 + seed);
    Rng rng(seed);
    const FeaturizedBag bag = random_bag(p.config, rng, 1 + rng.index(6), static_cast<int>(rng.index(3)));
    const std::vector<double> alpha = gold_attention(p, bag);
    ++bags;
    if (alpha.size() == 1) singleton_exact = singleton_exact && alpha[0] == 1.0;
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(alpha.begin(), alpha.end(), 0.0) - 1.0));

    Tensor f(1, 1 + rng.index(8));
    for (double& v : f.values()) v = rng.uniform(-5, 5);
    Tensor shifted = f;
    const double c = rng.uniform(-50, 50);
    for (double& v : shifted.values()) v += c;
    ag::Graph g;
    worst_shift = std::max(worst_shift, max_abs_diff(ag::softmax(g.constant(f)).value(),
                                                     ag::softmax(g.constant(shifted)).value()));
  }
  ModelParams p = tiny_model(1);
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> a = gold_attention(p, random_bag(p.config, rng, 1, static_cast<int>(rng.index(3))));
    singleton_exact = singleton_exact && a.size() == 1 && a[0] == 1.0;
  }
  std::ostringstream d;
  d << bags << " bags, max |sum alpha - 1| " << fmt("%.2e", worst_sum) << ", singleton alpha == 1.0 "
    << (singleton_exact ? "always" : "NOT always") << ", max shift deviation " << fmt("%.2e", worst_shift);
  return {worst_sum <= 1e-9 && singleton_exact && worst_shift <= 1e-12, d.str()};
}

// ---- 5 ------------------------------------------------------------------------------

Outcome metrics_oracle() {
  Rng rng(5);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 300 + rng.index(200);
    std::vector<EvalRecord> recs;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      EvalRecord r{"p" + std::to_string(rng.index(n)), static_cast<int>(1 + i % 5),
                   static_cast<double>(rng.index(50)) / 50.0, rng.bernoulli(0.35)};
      r.pair += "_" + std::to_string(i / 5);
      correct += r.correct;
      recs.push_back(r);
    }
    const std::size_t positives = correct + rng.index(20) + 1;
    // Independent oracle: index sort on (score desc, pair asc, relation asc), then cumulate.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (recs[a].score != recs[b].score) return recs[a].score > recs[b].score;
      return std::tie(recs[a].pair, recs[a].relation) < std::tie(recs[b].pair, recs[b].relation);
    });
    double tp = 0.0, area = 0.0, r0 = 0.0, p0 = -1.0;
    std::vector<double> hits_at(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      tp += recs[idx[k]].correct ? 1.0 : 0.0;
      hits_at[k + 1] = tp;
      const double prec = tp / static_cast<double>(k + 1), rec = tp / static_cast<double>(positives);
      if (p0 < 0.0) p0 = prec;
      area += (rec - r0) * (prec + p0) / 2.0;
      r0 = rec;
      p0 = prec;
    }
    const MetricsSummary s = summarize(recs, positives);
    if (s.auc != area) ++mismatches;
    if (s.p100 != hits_at[100] / 100.0 || s.p200 != hits_at[200] / 200.0 || s.p300 != hits_at[300] / 300.0) {
      ++mismatches;
    }
  }
  std::vector<EvalRecord> fixture;
  for (int i = 0; i < 300; ++i) {
    fixture.push_back({"pair" + std::to_string(i), 1, 1.0 - i / 1000.0, i < 100 ? i < 73 : (i % 3 == 0)});
  }
  const double p100 = p_at_n(fixture, 100);
  std::ostringstream d;
  d << "200 fixtures, " << mismatches << " mismatches against the brute-force oracle; constructed P@100 = "
    << fmt("%.2f", 100.0 * p100);
  return {mismatches == 0 && p100 == 0.73, d.str()};
}

// ---- 6 to 8: experiments on the synthetic corpus ----------------------------------------

struct Experiment {
  RunConfig config;
  SynthCorpus corpus;
  TrainConfig base;
  std::map<std::string, AblationRow> rows;
};

std::string row_text(const AblationRow& r) {
  std::string s = r.variant + " " + fmt("%.4f", r.mean_auc) + " [";
  for (std::size_t i = 0; i < r.aucs.size(); ++i) s += (i ? " " : "") + fmt("%.4f", r.aucs[i]);
  return s + "]";
}

Outcome ablation_direction(Experiment& ex) {
  const std::size_t instances = instance_count(ex.corpus.train);
  const double noise = noisy_fraction(ex.corpus.train, ex.corpus.train_truth);
  const std::vector<Variant> variants{Variant::parse("baseline"), Variant::parse("bat"), Variant::parse("ivat"),
                                      Variant::parse("ivat+bat"), Variant::parse("iat+bat"),
                                      Variant::parse("ivat+bvat")};
  const auto cells = run_ablation(ex.corpus.train, ex.corpus.test, ex.base, variants, 3, ex.config.threads);
  for (const AblationRow& r : ablation_table(cells)) ex.rows[r.variant] = r;
  const double base = ex.rows.at("baseline").mean_auc, bat = ex.rows.at("bat").mean_auc,
               ivat = ex.rows.at("ivat").mean_auc, both = ex.rows.at("ivat+bat").mean_auc;
  std::ostringstream d;
  d << instances << " train instances, noise " << fmt("%.3f", noise) << "; " << row_text(ex.rows.at("baseline"))
    << "; " << row_text(ex.rows.at("bat")) << "; " << row_text(ex.rows.at("ivat")) << "; "
    << row_text(ex.rows.at("ivat+bat")) << "; margin " << fmt("%+.4f", both - base);
  const bool ok = instances >= 5000 && std::abs(noise - 0.3) < 0.02 && base < bat && base < ivat &&
                  std::max(bat, ivat) < both && both - base >= 0.02;
  return {ok, d.str()};
}

Outcome filter_direction(const Experiment& ex) {
  const std::vector<double> thresholds{0.1};
  const std::vector<Variant> methods{Variant::parse("baseline"), Variant::parse("ivat+bat")};
  double base_drop = 0.0, both_drop = 0.0, removed = 0.0;
  std::ostringstream d;
  for (std::uint64_t s = 0; s < 3; ++s) {
    TrainConfig c = ex.base;
    c.seed = ex.base.seed + s;
    const auto rows = run_filter_experiment(ex.corpus.train, ex.corpus.test, thresholds, c, methods);
    for (const FilterRow& r : rows) {
      if (!r.filtered) continue;
      (r.method == "baseline" ? base_drop : both_drop) += -r.relative_delta / 3.0;
      if (r.method == "baseline") removed += r.removed_fraction / 3.0;
      d << "seed " << c.seed << " " << r.method << " " << fmt("%+.2f%%", 100.0 * r.relative_delta) << "; ";
    }
  }
  d << "removed " << fmt("%.1f%%", 100.0 * removed) << "; mean drop baseline " << fmt("%.2f%%", 100.0 * base_drop)
    << ", ivat+bat " << fmt("%.2f%%", 100.0 * both_drop);
  return {both_drop > base_drop, d.str()};
}

Outcome collaboration_order(const Experiment& ex) {
  const AblationRow& a = ex.rows.at("ivat+bat");
  const AblationRow& b = ex.rows.at("iat+bat");
  const AblationRow& c = ex.rows.at("ivat+bvat");
  std::ostringstream d;
  d << row_text(a) << "; " << row_text(b) << "; " << row_text(c);
  return {a.mean_auc > b.mean_auc && a.mean_auc > c.mean_auc, d.str()};
}

// ---- 9 ------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const RunConfig& base) {
  RunConfig c = base;
  c.train.variant = Variant::parse("ivat+bat");
  c.train.epochs = 3;
  const fs::path root = fs::temp_directory_path() / "dsre_acceptance_determinism";
  fs::remove_all(root);
  cmd_gen_data(c, root / "data");
  cmd_train(c, root / "data", root / "run1");
  cmd_train(c, root / "data", root / "run2");
  const bool ckpt = slurp(root / "run1" / "model.ckpt") == slurp(root / "run2" / "model.ckpt");
  const bool metrics = slurp(root / "run1" / "metrics.json") == slurp(root / "run2" / "metrics.json");
  const bool nonempty = !slurp(root / "run1" / "model.ckpt").empty();
  const std::size_t bytes = slurp(root / "run1" / "model.ckpt").size();
  fs::remove_all(root);
  std::ostringstream d;
  d << "checkpoint (" << bytes << " bytes) " << (ckpt ? "identical" : "DIFFERS") << ", metrics.json "
    << (metrics ? "identical" : "DIFFERS");
  return {ckpt && metrics && nonempty, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config_path = argc > 1 ? fs::path(argv[1]) : fs::path(DSRE_ACCEPTANCE_CONFIG);
  set_log_level(LogLevel::Quiet);

  report(1, "gradient correctness", gradient_correctness);
  report(2, "power-iteration fidelity", power_iteration_fidelity);
  report(3, "perturbation-norm invariants", perturbation_norms);
  report(4, "attention invariants", attention_invariants);
  report(5, "metrics oracle equivalence", metrics_oracle);

  Experiment ex;
  bool have_experiment = false;
  try {
    ex.config = load_config(config_path);
    ex.corpus = generate_synth(ex.config.synth_for_run());
    ex.base = ex.config.train_for_run();
    ex.base.model.n_relations = ex.corpus.relations.size();
    have_experiment = true;
  } catch (const std::exception& e) {
    std::printf("cannot prepare the synthetic experiment from %s: %s\n", config_path.c_str(), e.what());
  }
  auto experiment = [&](const std::function<Outcome()>& f) {
    return [&, f] { return have_experiment ? f() : Outcome{false, "no experiment"}; };
  };
  bool ablation_done = false;
  report(6, "ablation direction", experiment([&] {
           Outcome o = ablation_direction(ex);
           ablation_done = true;
           return o;
         }));
  report(7, "controlled-experiment direction", experiment([&] { return filter_direction(ex); }));
  report(8, "collaboration ordering", experiment([&] {
           return ablation_done ? collaboration_order(ex) : Outcome{false, "ablation did not run"};
         }));
  report(9, "determinism", experiment([&] { return determinism(ex.config); }));

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
