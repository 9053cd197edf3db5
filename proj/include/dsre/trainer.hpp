#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsre/bat.hpp"
#include "dsre/corpus.hpp"
#include "dsre/featurizer.hpp"
#include "dsre/ivat.hpp"
#include "dsre/metrics.hpp"
#include "dsre/model.hpp"

namespace dsre {

class Rng;

enum class InstanceReg { None, Vat, At };
enum class InstanceScope { Noisy, All };
enum class BagReg { None, At, Vat };

/// Which regularizers a run adds on top of the MIL objective.
///
/// Names are '+'-joined parts: "baseline", "ivat", "iat" (noisy instances),
/// "all-vat", "all-at" (every instance), "bat", "bvat". Examples: "ivat+bat",
/// "iat+bvat", "all-vat".
struct Variant {
  InstanceReg instance = InstanceReg::None;
  InstanceScope scope = InstanceScope::Noisy;
  BagReg bag = BagReg::None;

  static Variant parse(std::string_view name);
  std::string name() const;
  friend bool operator==(const Variant&, const Variant&) = default;
};

struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 15;
  std::size_t batch_size = 50;  // bags
  double learning_rate = 0.1;
  std::vector<double> decay_at{0.6, 0.8};  // fractions of the epoch budget
  double decay_factor = 0.1;
  std::size_t min_count = 1;  // vocabulary cutoff
  std::uint64_t seed = 1;
  Variant variant;
  IvatConfig ivat;
  BatConfig bat;

  void validate() const;
  double learning_rate_at(std::size_t epoch) const;
};

/// Attention scores in ten bins of width 0.1; singleton bags (alpha = 1) apart.
struct AttentionHistogram {
  std::array<std::size_t, 10> bins{};
  std::size_t singleton = 0;

  void add(std::span<const double> alpha);
  std::size_t total() const;
  /// Share of multi-instance scores below `threshold`, counted per bin edge.
  double mass_below(double threshold) const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double mil = 0.0;    // J
  double lds_x = 0.0;  // instance term before weighting
  double lds_z = 0.0;  // bag term before weighting
  double total = 0.0;  // L
  std::size_t steps = 0;
  std::size_t selected_instances = 0;
  PerturbationStats perturbations;
  AttentionHistogram histogram;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

std::string epoch_json(const EpochLog& e);
void write_log_jsonl(const std::filesystem::path& path, const TrainLog& log);

/// Histogram of the last logged epoch.
AttentionHistogram attention_histogram(const TrainLog& log);
/// Histogram of gold-query attention over `bags` at the given parameters.
AttentionHistogram attention_histogram(const ModelParams& params, std::span<const FeaturizedBag> bags);

// ---- one optimization step ---------------------------------------------------

/// Perturbations chosen for one step, computed from values of the main forward.
struct StepPlan {
  struct InstanceItem {
    std::size_t bag = 0;
    std::size_t index = 0;
    Tensor p_clean;  // instance VAT only
    Tensor perturbation;
  };
  struct BagItem {
    std::size_t bag = 0;
    Tensor p_clean;  // bag VAT only
    Tensor perturbation;
  };
  std::vector<InstanceItem> instances;
  std::vector<BagItem> bags;
};

using Planner = std::function<StepPlan(std::span<const BagForward>)>;

/// Estimates fresh perturbations with `rng`; optionally records the plan.
Planner live_planner(const ModelParams& params, std::span<const FeaturizedBag> batch, const TrainConfig& config,
                     Rng& rng, PerturbationStats* stats = nullptr, StepPlan* record = nullptr);
/// Replays a stored plan.
Planner fixed_planner(StepPlan plan);

struct StepTerms {
  ag::Var mil;
  ag::Var instance;  // unweighted; zero constant when unused
  ag::Var bag;
  ag::Var total;     // mil + beta1 * instance + beta2 * bag
  std::vector<BagForward> forwards;
  std::size_t selected = 0;
};

/// Builds L on `g` for one batch. Terms with a zero weight are left out.
StepTerms build_step(ag::Graph& g, ModelParams& params, std::span<const FeaturizedBag> batch,
                     const TrainConfig& config, const Planner& planner);

// ---- training ----------------------------------------------------------------

struct TrainResult {
  ModelParams params;
  Vocab vocab;
  TrainLog log;
  bool diverged = false;
  std::string divergence;
};

/// Trains from scratch. `config.model.n_relations` must cover every label.
/// On a non-finite loss the parameters of the last completed epoch are kept.
TrainResult train(const std::vector<Bag>& bags, const TrainConfig& config);

/// Same, over already featurized bags and a fixed vocabulary.
TrainResult train(std::span<const FeaturizedBag> bags, Vocab vocab, const TrainConfig& config);

// ---- evaluation ----------------------------------------------------------------

struct Evaluation {
  std::vector<EvalRecord> records;
  std::size_t positives = 0;
  std::vector<PrPoint> curve;
  MetricsSummary summary;
};

/// Held-out evaluation: one record per (test pair, non-NA relation).
Evaluation evaluate(const ModelParams& params, const Vocab& vocab, const std::vector<Bag>& test_bags);

// ---- experiment drivers ----------------------------------------------------------

struct AblationCell {
  std::string variant;
  std::uint64_t seed = 0;
  MetricsSummary metrics;
  bool diverged = false;
};

struct AblationRow {
  std::string variant;
  std::vector<double> aucs;
  double mean_auc = 0.0;
  double std_auc = 0.0;
};

/// Trains every variant under seeds base.seed, base.seed + 1, ... and evaluates
/// each cell. Cells run on up to `threads` workers.
std::vector<AblationCell> run_ablation(const std::vector<Bag>& train_bags, const std::vector<Bag>& test_bags,
                                       const TrainConfig& base, const std::vector<Variant>& variants,
                                       std::size_t seeds, std::size_t threads = 1);
std::vector<AblationRow> ablation_table(const std::vector<AblationCell>& cells);

/// Gold-query attention of every instance in `bags`; instances the featurizer
/// rejects score 1 so they are never filtered.
std::vector<std::vector<double>> instance_attention(const ModelParams& params, const Vocab& vocab,
                                                    const std::vector<Bag>& bags);

struct FilterRow {
  bool filtered = false;
  double threshold = 0.0;
  std::string method;
  std::size_t sentences = 0;
  double removed_fraction = 0.0;
  double auc = 0.0;
  double relative_delta = 0.0;  // (auc - full auc) / full auc
};

/// For every threshold, drops training instances whose attention under the
/// full-data baseline falls below it, retrains each method and compares AUC.
std::vector<FilterRow> run_filter_experiment(const std::vector<Bag>& train_bags, const std::vector<Bag>& test_bags,
                                             std::span<const double> thresholds, const TrainConfig& base,
                                             const std::vector<Variant>& methods);

}  // namespace dsre
