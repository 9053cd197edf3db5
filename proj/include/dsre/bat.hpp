#pragma once

#include <cstddef>
#include <span>

#include "dsre/autograd.hpp"
#include "dsre/ivat.hpp"
#include "dsre/model.hpp"

namespace dsre {

class Rng;

struct BatConfig {
  double epsilon = -1.0;  // radius on z; negative selects 0.05 * sqrt(3p)
  double beta = 1.0;
  int power_iterations = 1;  // bag-level VAT only
  double xi = -1.0;          // bag-level VAT probe; negative selects 1e-6 * sqrt(3p)

  void validate() const;
  double radius(std::size_t feature_dim) const;
  double probe_scale(std::size_t feature_dim) const;
};

/// d_adv = epsilon * g / ||g|| with g = grad_z of -log p(relation | z), evaluated
/// on a detached copy of z. A flat gradient yields the zero vector.
Tensor estimate_adv(const ModelParams& params, const Tensor& z, int relation, double epsilon,
                    PerturbationStats* stats = nullptr);

struct AdversarialBag {
  ag::Var z;
  int relation = 0;
  Tensor perturbation;
};

/// Mean over bags of -log p(relation | z + d_adv); 0 when there are none.
ag::Var lds_z_loss(ag::Graph& g, const BoundModel& m, std::span<const AdversarialBag> bags);

// ---- bag-level virtual adversarial training (ablation variants) ---------------

/// Virtual adversarial direction on z with norm epsilon, label free.
Tensor estimate_bag_vadv(const ModelParams& params, const Tensor& z, const Tensor& p_clean, const BatConfig& config,
                         Rng& rng, PerturbationStats* stats = nullptr);

struct SmoothedBag {
  ag::Var z;
  Tensor p_clean;
  Tensor perturbation;
};

/// Mean over bags of KL[p_clean || p(y | z + d)]; 0 when there are none.
ag::Var bag_vat_loss(ag::Graph& g, const BoundModel& m, std::span<const SmoothedBag> bags);

}  // namespace dsre
