#include "dsre/ivat.hpp"

#include <cmath>
#include <stdexcept>

#include "dsre/random.hpp"

namespace dsre {

namespace {

constexpr double kFlatNorm = 1e-12;

void mask_pad_rows(Tensor& t, const FeaturizedInstance& inst) {
  for (std::size_t r = inst.length; r < t.rows(); ++r) {
    for (double& v : t.row(r)) v = 0.0;
  }
}

}  // namespace

void IvatConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("ivat: threshold must lie in (0,1)");
  if (epsilon < 0.0) throw std::invalid_argument("ivat: epsilon must be non-negative");
  if (power_iterations < 1) throw std::invalid_argument("ivat: need at least one power iteration");
  if (beta < 0.0) throw std::invalid_argument("ivat: beta must be non-negative");
}

double IvatConfig::probe_scale(std::size_t dim) const {
  return xi > 0.0 ? xi : 1e-6 * std::sqrt(static_cast<double>(dim));
}

std::vector<std::size_t> select_noisy(std::span<const double> alpha, double threshold) {
  std::vector<std::size_t> out;
  if (alpha.size() < 2) return out;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] < threshold) out.push_back(i);
  }
  return out;
}

Tensor scale_to_norm(Tensor g, double epsilon, bool* flat) {
  const double n = l2_norm(g);
  const bool is_flat = !(n >= kFlatNorm);
  if (flat != nullptr) *flat = is_flat;
  if (is_flat) return Tensor(g.rows(), g.cols());
  for (double& v : g.values()) v *= epsilon / n;
  return g;
}

PowerIteration power_iteration(Tensor d0, const ProbeGradient& grad_at, double xi, int iterations) {
  PowerIteration res{std::move(d0), false};
  for (int k = 0; k < iterations; ++k) {
    Tensor r = res.direction;
    for (double& v : r.values()) v *= xi;
    Tensor g = grad_at(r);
    const double n = l2_norm(g);
    if (!(n >= kFlatNorm)) {
      res.flat = true;
      break;
    }
    for (double& v : g.values()) v /= n;
    res.direction = std::move(g);
  }
  return res;
}

Tensor random_unit_direction(const FeaturizedInstance& inst, std::size_t cols, Rng& rng) {
  Tensor d(inst.word_ids.size(), cols);
  for (std::size_t r = 0; r < inst.length; ++r) {
    for (double& v : d.row(r)) v = rng.normal();
  }
  const double n = l2_norm(d);
  for (double& v : d.values()) v /= n;
  return d;
}

Tensor random_unit_direction(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor d(rows, cols);
  for (double& v : d.values()) v = rng.normal();
  const double n = l2_norm(d);
  for (double& v : d.values()) v /= n;
  return d;
}

ag::Var instance_distribution(const BoundModel& m, ag::Var x, const FeaturizedInstance& inst) {
  return classify(m.encode(x, inst), m.attention);
}

Tensor clean_distribution(const ModelParams& params, const FeaturizedInstance& inst) {
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  return instance_distribution(m, m.embed(inst), inst).value();
}

Tensor estimate_vadv(const ModelParams& params, const Tensor& x, const FeaturizedInstance& inst, const Tensor& p_clean,
                     const IvatConfig& config, Rng& rng, PerturbationStats* stats) {
  auto grad_at = [&](const Tensor& r) {
    ag::Graph g(ag::Mode::Frozen);
    const BoundModel m = BoundModel::bind(g, params);
    ag::Var probe = g.input(r);
    ag::Var xr = ag::add(g.constant(x), probe);
    ag::Var kl = ag::kl_div(g.constant(p_clean), classify_log(m.encode(xr, inst), m.attention));
    g.backward(kl);
    Tensor grad = g.grad(probe);
    mask_pad_rows(grad, inst);
    return grad;
  };
  PowerIteration it = power_iteration(random_unit_direction(inst, x.cols(), rng), grad_at,
                                      config.probe_scale(x.size()), config.power_iterations);
  if (stats != nullptr) {
    ++stats->estimated;
    if (it.flat) ++stats->flat;
  }
  for (double& v : it.direction.values()) v *= config.epsilon;
  return std::move(it.direction);
}

ag::Var lds_x_loss(ag::Graph& g, const BoundModel& m, std::span<const SmoothedInstance> items) {
  if (items.empty()) return g.constant(Tensor::scalar(0.0));
  std::vector<ag::Var> terms;
  terms.reserve(items.size());
  for (const SmoothedInstance& it : items) {
    ag::Var xr = ag::add(it.x, g.constant(it.perturbation));
    terms.push_back(ag::kl_div(g.constant(it.p_clean), classify_log(m.encode(xr, *it.inst), m.attention)));
  }
  return mean(terms);
}

Tensor estimate_instance_adv(const ModelParams& params, const Tensor& x, const FeaturizedInstance& inst, int relation,
                             double epsilon, PerturbationStats* stats) {
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  ag::Var xv = g.input(x);
  g.backward(bag_nll(m.encode(xv, inst), relation, m.attention));
  Tensor grad = g.grad(xv);
  mask_pad_rows(grad, inst);
  bool flat = false;
  Tensor d = scale_to_norm(std::move(grad), epsilon, &flat);
  if (stats != nullptr) {
    ++stats->estimated;
    if (flat) ++stats->flat;
  }
  return d;
}

ag::Var instance_at_loss(ag::Graph& g, const BoundModel& m, std::span<const AdversarialInstance> items) {
  if (items.empty()) return g.constant(Tensor::scalar(0.0));
  std::vector<ag::Var> terms;
  terms.reserve(items.size());
  for (const AdversarialInstance& it : items) {
    ag::Var xr = ag::add(it.x, g.constant(it.perturbation));
    terms.push_back(bag_nll(m.encode(xr, *it.inst), it.relation, m.attention));
  }
  return mean(terms);
}

}  // namespace dsre
