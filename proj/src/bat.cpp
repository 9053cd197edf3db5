#include "dsre/bat.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dsre/random.hpp"

namespace dsre {

void BatConfig::validate() const {
  if (beta < 0.0) throw std::invalid_argument("bat: beta must be non-negative");
  if (power_iterations < 1) throw std::invalid_argument("bat: need at least one power iteration");
}

double BatConfig::radius(std::size_t feature_dim) const {
  return epsilon >= 0.0 ? epsilon : 0.05 * std::sqrt(static_cast<double>(feature_dim));
}

double BatConfig::probe_scale(std::size_t feature_dim) const {
  return xi > 0.0 ? xi : 1e-6 * std::sqrt(static_cast<double>(feature_dim));
}

Tensor estimate_adv(const ModelParams& params, const Tensor& z, int relation, double epsilon,
                    PerturbationStats* stats) {
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  ag::Var zv = g.input(z);
  g.backward(bag_nll(zv, relation, m.attention));
  bool flat = false;
  Tensor d = scale_to_norm(g.grad(zv), epsilon, &flat);
  if (stats != nullptr) {
    ++stats->estimated;
    if (flat) ++stats->flat;
  }
  return d;
}

ag::Var lds_z_loss(ag::Graph& g, const BoundModel& m, std::span<const AdversarialBag> bags) {
  if (bags.empty()) return g.constant(Tensor::scalar(0.0));
  std::vector<ag::Var> terms;
  terms.reserve(bags.size());
  for (const AdversarialBag& b : bags) {
    terms.push_back(bag_nll(ag::add(b.z, g.constant(b.perturbation)), b.relation, m.attention));
  }
  return mean(terms);
}

Tensor estimate_bag_vadv(const ModelParams& params, const Tensor& z, const Tensor& p_clean, const BatConfig& config,
                         Rng& rng, PerturbationStats* stats) {
  auto grad_at = [&](const Tensor& r) {
    ag::Graph g(ag::Mode::Frozen);
    const BoundModel m = BoundModel::bind(g, params);
    ag::Var probe = g.input(r);
    ag::Var zr = ag::add(g.constant(z), probe);
    g.backward(ag::kl_div(g.constant(p_clean), classify_log(zr, m.attention)));
    return g.grad(probe);
  };
  PowerIteration it = power_iteration(random_unit_direction(z.rows(), z.cols(), rng), grad_at,
                                      config.probe_scale(z.size()), config.power_iterations);
  if (stats != nullptr) {
    ++stats->estimated;
    if (it.flat) ++stats->flat;
  }
  const double eps = config.radius(z.size());
  for (double& v : it.direction.values()) v *= eps;
  return std::move(it.direction);
}

ag::Var bag_vat_loss(ag::Graph& g, const BoundModel& m, std::span<const SmoothedBag> bags) {
  if (bags.empty()) return g.constant(Tensor::scalar(0.0));
  std::vector<ag::Var> terms;
  terms.reserve(bags.size());
  for (const SmoothedBag& b : bags) {
    ag::Var zr = ag::add(b.z, g.constant(b.perturbation));
    terms.push_back(ag::kl_div(g.constant(b.p_clean), classify_log(zr, m.attention)));
  }
  return mean(terms);
}

}  // namespace dsre
