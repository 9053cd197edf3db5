#include "dsre/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <thread>

#include "dsre/random.hpp"
#include "json.hpp"

namespace dsre {

namespace {

bool uses_instance(const TrainConfig& c) { return c.variant.instance != InstanceReg::None && c.ivat.beta > 0.0; }
bool uses_bag(const TrainConfig& c) { return c.variant.bag != BagReg::None && c.bat.beta > 0.0; }

Tensor row_of(const Tensor& t, std::size_t r) {
  Tensor out(1, t.cols());
  std::copy(t.row(r).begin(), t.row(r).end(), out.values().begin());
  return out;
}

std::vector<FeaturizedInstance> featurize_all(const Bag& bag, const FeaturizerConfig& config, const Vocab& vocab,
                                              std::vector<std::size_t>* kept) {
  std::vector<FeaturizedInstance> out;
  for (std::size_t i = 0; i < bag.instances.size(); ++i) {
    try {
      out.push_back(featurize(bag.instances[i], config, vocab));
      if (kept != nullptr) kept->push_back(i);
    } catch (const FeaturizeError&) {
    }
  }
  return out;
}

}  // namespace

// ---- Variant -------------------------------------------------------------------

Variant Variant::parse(std::string_view name) {
  Variant v;
  bool instance_set = false;
  bool bag_set = false;
  std::size_t pos = 0;
  while (pos <= name.size()) {
    const std::size_t next = std::min(name.find('+', pos), name.size());
    const std::string_view part = name.substr(pos, next - pos);
    pos = next + 1;
    if (part.empty() || part == "baseline") continue;
    auto set_instance = [&](InstanceReg reg, InstanceScope scope) {
      if (instance_set) throw std::invalid_argument("variant '" + std::string(name) + "': two instance regularizers");
      v.instance = reg;
      v.scope = scope;
      instance_set = true;
    };
    auto set_bag = [&](BagReg reg) {
      if (bag_set) throw std::invalid_argument("variant '" + std::string(name) + "': two bag regularizers");
      v.bag = reg;
      bag_set = true;
    };
    if (part == "ivat") {
      set_instance(InstanceReg::Vat, InstanceScope::Noisy);
    } else if (part == "iat") {
      set_instance(InstanceReg::At, InstanceScope::Noisy);
    } else if (part == "all-vat") {
      set_instance(InstanceReg::Vat, InstanceScope::All);
    } else if (part == "all-at") {
      set_instance(InstanceReg::At, InstanceScope::All);
    } else if (part == "bat") {
      set_bag(BagReg::At);
    } else if (part == "bvat") {
      set_bag(BagReg::Vat);
    } else {
      throw std::invalid_argument("unknown variant part '" + std::string(part) + "' in '" + std::string(name) + "'");
    }
  }
  return v;
}

std::string Variant::name() const {
  std::string out;
  if (instance == InstanceReg::Vat) out = scope == InstanceScope::Noisy ? "ivat" : "all-vat";
  if (instance == InstanceReg::At) out = scope == InstanceScope::Noisy ? "iat" : "all-at";
  if (bag != BagReg::None) {
    if (!out.empty()) out += "+";
    out += bag == BagReg::At ? "bat" : "bvat";
  }
  return out.empty() ? "baseline" : out;
}

// ---- TrainConfig -----------------------------------------------------------------

void TrainConfig::validate() const {
  model.validate();
  ivat.validate();
  bat.validate();
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("train: decay factor must lie in (0,1]");
  for (double m : decay_at) {
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("train: decay milestones must lie in (0,1]");
  }
  if (min_count < 1) throw std::invalid_argument("train: min_count must be >= 1");
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (double m : decay_at) {
    if (static_cast<double>(epoch) >= std::floor(m * static_cast<double>(epochs) + 1e-9)) lr *= decay_factor;
  }
  return lr;
}

// ---- histogram ---------------------------------------------------------------------

void AttentionHistogram::add(std::span<const double> alpha) {
  if (alpha.size() == 1) {
    ++singleton;
    return;
  }
  for (double a : alpha) {
    const auto bin = static_cast<std::size_t>(std::clamp(std::floor(a * 10.0), 0.0, 9.0));
    ++bins[bin];
  }
}

std::size_t AttentionHistogram::total() const {
  return std::accumulate(bins.begin(), bins.end(), singleton);
}

double AttentionHistogram::mass_below(double threshold) const {
  const std::size_t multi = total() - singleton;
  if (multi == 0) return 0.0;
  const auto edge = static_cast<std::size_t>(std::clamp(std::round(threshold * 10.0), 0.0, 10.0));
  const std::size_t below = std::accumulate(bins.begin(), bins.begin() + static_cast<std::ptrdiff_t>(edge),
                                            std::size_t{0});
  return static_cast<double>(below) / static_cast<double>(multi);
}

std::string epoch_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["lr"] = e.learning_rate;
  j["J"] = e.mil;
  j["LDS-X"] = e.lds_x;
  j["LDS-Z"] = e.lds_z;
  j["L"] = e.total;
  j["steps"] = e.steps;
  j["selected_instances"] = e.selected_instances;
  j["perturbations"] = e.perturbations.estimated;
  j["flat_gradient_events"] = e.perturbations.flat;
  j["histogram"] = e.histogram.bins;
  j["histogram_singleton"] = e.histogram.singleton;
  return j.dump();
}

void write_log_jsonl(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const EpochLog& e : log.epochs) out << epoch_json(e) << "\n";
}

AttentionHistogram attention_histogram(const TrainLog& log) {
  if (log.epochs.empty()) throw std::invalid_argument("attention_histogram: no epoch logged");
  return log.epochs.back().histogram;
}

AttentionHistogram attention_histogram(const ModelParams& params, std::span<const FeaturizedBag> bags) {
  AttentionHistogram h;
  for (const FeaturizedBag& b : bags) h.add(gold_attention(params, b));
  return h;
}

// ---- step --------------------------------------------------------------------------

Planner live_planner(const ModelParams& params, std::span<const FeaturizedBag> batch, const TrainConfig& config,
                     Rng& rng, PerturbationStats* stats, StepPlan* record) {
  return [&params, batch, &config, &rng, stats, record](std::span<const BagForward> forwards) {
    StepPlan plan;
    const Variant& v = config.variant;
    if (uses_instance(config)) {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& alpha = forwards[b].alpha.value();
        std::vector<std::size_t> picked;
        if (v.scope == InstanceScope::Noisy) {
          picked = select_noisy(alpha.values(), config.ivat.threshold);
        } else {
          picked.resize(alpha.size());
          std::iota(picked.begin(), picked.end(), std::size_t{0});
        }
        for (std::size_t i : picked) {
          const FeaturizedInstance& inst = batch[b].instances[i];
          const Tensor& x = forwards[b].inputs[i].value();
          StepPlan::InstanceItem item{b, i, {}, {}};
          if (v.instance == InstanceReg::Vat) {
            item.p_clean = classify_value(params, row_of(forwards[b].features.value(), i));
            item.perturbation = estimate_vadv(params, x, inst, item.p_clean, config.ivat, rng, stats);
          } else {
            item.perturbation =
                estimate_instance_adv(params, x, inst, batch[b].relations.at(0), config.ivat.epsilon, stats);
          }
          plan.instances.push_back(std::move(item));
        }
      }
    }
    if (uses_bag(config)) {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& z = forwards[b].z.value();
        StepPlan::BagItem item{b, {}, {}};
        if (v.bag == BagReg::At) {
          item.perturbation = estimate_adv(params, z, batch[b].relations.at(0), config.bat.radius(z.size()), stats);
        } else {
          item.p_clean = classify_value(params, z);
          item.perturbation = estimate_bag_vadv(params, z, item.p_clean, config.bat, rng, stats);
        }
        plan.bags.push_back(std::move(item));
      }
    }
    if (record != nullptr) *record = plan;
    return plan;
  };
}

Planner fixed_planner(StepPlan plan) {
  return [plan = std::move(plan)](std::span<const BagForward>) { return plan; };
}

StepTerms build_step(ag::Graph& g, ModelParams& params, std::span<const FeaturizedBag> batch,
                     const TrainConfig& config, const Planner& planner) {
  if (batch.empty()) throw std::invalid_argument("build_step: empty batch");
  const BoundModel m = BoundModel::bind(g, params);
  StepTerms t;
  std::vector<ag::Var> nll;
  nll.reserve(batch.size());
  for (const FeaturizedBag& bag : batch) {
    const int r = bag.relations.at(0);
    t.forwards.push_back(forward_bag(m, bag, r));
    nll.push_back(bag_nll(t.forwards.back().z, r, m.attention));
  }
  t.mil = mean(nll);
  t.instance = g.constant(Tensor::scalar(0.0));
  t.bag = g.constant(Tensor::scalar(0.0));
  t.total = t.mil;

  const bool inst_on = uses_instance(config);
  const bool bag_on = uses_bag(config);
  if (!inst_on && !bag_on) return t;

  const StepPlan plan = planner(t.forwards);
  const Variant& v = config.variant;
  if (inst_on) {
    t.selected = plan.instances.size();
    if (v.instance == InstanceReg::Vat) {
      std::vector<SmoothedInstance> items;
      for (const auto& it : plan.instances) {
        items.push_back({t.forwards.at(it.bag).inputs.at(it.index), &batch[it.bag].instances[it.index], it.p_clean,
                         it.perturbation});
      }
      t.instance = lds_x_loss(g, m, items);
    } else {
      std::vector<AdversarialInstance> items;
      for (const auto& it : plan.instances) {
        items.push_back({t.forwards.at(it.bag).inputs.at(it.index), &batch[it.bag].instances[it.index],
                         batch[it.bag].relations.at(0), it.perturbation});
      }
      t.instance = instance_at_loss(g, m, items);
    }
    t.total = ag::add(t.total, ag::scale(t.instance, config.ivat.beta));
  }
  if (bag_on) {
    if (v.bag == BagReg::At) {
      std::vector<AdversarialBag> items;
      for (const auto& it : plan.bags) {
        items.push_back({t.forwards.at(it.bag).z, batch[it.bag].relations.at(0), it.perturbation});
      }
      t.bag = lds_z_loss(g, m, items);
    } else {
      std::vector<SmoothedBag> items;
      for (const auto& it : plan.bags) items.push_back({t.forwards.at(it.bag).z, it.p_clean, it.perturbation});
      t.bag = bag_vat_loss(g, m, items);
    }
    t.total = ag::add(t.total, ag::scale(t.bag, config.bat.beta));
  }
  return t;
}

// ---- training --------------------------------------------------------------------

TrainResult train(const std::vector<Bag>& bags, const TrainConfig& config) {
  Vocab vocab = Vocab::build(bags, config.min_count);
  const std::vector<FeaturizedBag> featurized = featurize_bags(bags, config.model.featurizer, vocab);
  return train(featurized, std::move(vocab), config);
}

TrainResult train(std::span<const FeaturizedBag> bags, Vocab vocab, const TrainConfig& config) {
  config.validate();
  if (bags.empty()) throw std::invalid_argument("train: empty corpus");
  for (const FeaturizedBag& b : bags) {
    if (b.relations.empty() || b.relations.front() < 0 ||
        static_cast<std::size_t>(b.relations.front()) >= config.model.n_relations) {
      throw std::invalid_argument("train: bag " + b.pair + " has a label outside the relation set");
    }
  }

  Rng init_rng(split_seed(config.seed, "init"));
  Rng order_rng(split_seed(config.seed, "order"));
  Rng probe_rng(split_seed(config.seed, "probe"));

  TrainResult res;
  res.vocab = std::move(vocab);
  res.params = ModelParams::init(config.model, res.vocab.size(), init_rng);
  ModelParams last_good = res.params;

  std::vector<std::size_t> order(bags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<FeaturizedBag> batch;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.learning_rate = config.learning_rate_at(epoch);
    order_rng.shuffle(order);
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t stop = std::min(order.size(), start + config.batch_size);
        batch.clear();
        for (std::size_t k = start; k < stop; ++k) batch.push_back(bags[order[k]]);

        res.params.zero_grad();
        ag::Graph g(ag::Mode::Train);
        StepTerms t = build_step(g, res.params, batch, config,
                                 live_planner(res.params, batch, config, probe_rng, &log.perturbations));
        for (const BagForward& f : t.forwards) log.histogram.add(f.alpha.value().values());
        log.mil += t.mil.value().item();
        log.lds_x += t.instance.value().item();
        log.lds_z += t.bag.value().item();
        log.total += t.total.value().item();
        log.selected_instances += t.selected;
        ++log.steps;
        g.backward(t.total);
        for (ag::Parameter* p : res.params.parameters()) {
          if (!p->grad.same_shape(p->value)) continue;
          axpy(-log.learning_rate, p->grad, p->value);
          if (!p->value.all_finite()) throw ag::NonFiniteError("sgd update of " + p->name);
        }
      }
    } catch (const ag::NonFiniteError& e) {
      res.params = last_good;
      res.diverged = true;
      res.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    const double steps = static_cast<double>(log.steps);
    log.mil /= steps;
    log.lds_x /= steps;
    log.lds_z /= steps;
    log.total /= steps;
    res.log.epochs.push_back(log);
    last_good = res.params;
  }
  res.params.zero_grad();
  return res;
}

// ---- evaluation --------------------------------------------------------------------

Evaluation evaluate(const ModelParams& params, const Vocab& vocab, const std::vector<Bag>& test_bags) {
  Evaluation ev;
  const int n_r = static_cast<int>(params.config.n_relations);
  for (const Bag& bag : test_bags) {
    for (int r : bag.relations) {
      if (r > 0) ++ev.positives;
    }
    FeaturizedBag fb;
    fb.instances = featurize_all(bag, params.config.featurizer, vocab, nullptr);
    if (fb.instances.empty()) continue;
    fb.relations = bag.relations;
    const std::vector<double> scores = infer_bag(params, fb);
    const std::string pair = bag.key.pair();
    for (int r = 1; r < n_r; ++r) {
      const bool correct = std::find(bag.relations.begin(), bag.relations.end(), r) != bag.relations.end();
      ev.records.push_back({pair, r, scores[static_cast<std::size_t>(r)], correct});
    }
  }
  ev.curve = pr_curve(ev.records, ev.positives);
  ev.summary = summarize(ev.records, ev.positives);
  return ev;
}

// ---- experiment drivers ------------------------------------------------------------

std::vector<AblationCell> run_ablation(const std::vector<Bag>& train_bags, const std::vector<Bag>& test_bags,
                                       const TrainConfig& base, const std::vector<Variant>& variants,
                                       std::size_t seeds, std::size_t threads) {
  if (seeds < 1) throw std::invalid_argument("ablation: need at least one seed");
  std::vector<AblationCell> cells;
  std::vector<TrainConfig> configs;
  for (const Variant& v : variants) {
    for (std::size_t s = 0; s < seeds; ++s) {
      TrainConfig c = base;
      c.variant = v;
      c.seed = base.seed + s;
      configs.push_back(c);
      cells.push_back({v.name(), c.seed, {}, false});
    }
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        const TrainResult r = train(train_bags, configs[i]);
        cells[i].metrics = evaluate(r.params, r.vocab, test_bags).summary;
        cells[i].diverged = r.diverged;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, configs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return cells;
}

std::vector<AblationRow> ablation_table(const std::vector<AblationCell>& cells) {
  std::vector<AblationRow> rows;
  for (const AblationCell& c : cells) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.variant == c.variant; });
    if (it == rows.end()) {
      rows.push_back({c.variant, {}, 0.0, 0.0});
      it = rows.end() - 1;
    }
    it->aucs.push_back(c.metrics.auc);
  }
  for (AblationRow& r : rows) {
    const double n = static_cast<double>(r.aucs.size());
    r.mean_auc = std::accumulate(r.aucs.begin(), r.aucs.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : r.aucs) ss += (a - r.mean_auc) * (a - r.mean_auc);
    r.std_auc = r.aucs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return rows;
}

std::vector<std::vector<double>> instance_attention(const ModelParams& params, const Vocab& vocab,
                                                    const std::vector<Bag>& bags) {
  std::vector<std::vector<double>> scores;
  scores.reserve(bags.size());
  for (const Bag& bag : bags) {
    std::vector<double> s(bag.instances.size(), 1.0);
    std::vector<std::size_t> kept;
    FeaturizedBag fb;
    fb.instances = featurize_all(bag, params.config.featurizer, vocab, &kept);
    fb.relations = bag.relations;
    if (!fb.instances.empty()) {
      const std::vector<double> alpha = gold_attention(params, fb);
      for (std::size_t k = 0; k < kept.size(); ++k) s[kept[k]] = alpha[k];
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

std::vector<FilterRow> run_filter_experiment(const std::vector<Bag>& train_bags, const std::vector<Bag>& test_bags,
                                             std::span<const double> thresholds, const TrainConfig& base,
                                             const std::vector<Variant>& methods) {
  if (methods.empty()) throw std::invalid_argument("filter experiment: no methods");
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("filter experiment: thresholds must lie in [0,1]");
  }
  auto run = [&](const std::vector<Bag>& bags, const Variant& v) {
    TrainConfig c = base;
    c.variant = v;
    return train(bags, c);
  };

  std::vector<FilterRow> rows;
  std::vector<double> full_auc;
  std::optional<TrainResult> scorer;
  const std::size_t sentences = instance_count(train_bags);
  for (const Variant& v : methods) {
    TrainResult r = run(train_bags, v);
    const double a = evaluate(r.params, r.vocab, test_bags).summary.auc;
    full_auc.push_back(a);
    rows.push_back({false, 0.0, v.name(), sentences, 0.0, a, 0.0});
    if (v == Variant{} && !scorer) scorer = std::move(r);
  }
  if (!scorer) scorer = run(train_bags, Variant{});
  const std::vector<std::vector<double>> scores = instance_attention(scorer->params, scorer->vocab, train_bags);

  for (double t : thresholds) {
    const FilterResult f = filter_low_attention(train_bags, scores, t);
    if (f.bags.empty()) {
      throw std::invalid_argument("filter experiment: threshold " + std::to_string(t) + " removes every instance");
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const TrainResult r = run(f.bags, methods[m]);
      const double a = evaluate(r.params, r.vocab, test_bags).summary.auc;
      const double delta = full_auc[m] > 0.0 ? (a - full_auc[m]) / full_auc[m] : 0.0;
      rows.push_back({true, t, methods[m].name(), instance_count(f.bags), f.removed_fraction(), a, delta});
    }
  }
  return rows;
}

}  // namespace dsre
