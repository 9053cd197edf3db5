#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dsre/autograd.hpp"
#include "dsre/featurizer.hpp"
#include "dsre/model.hpp"

namespace dsre {

class Rng;

struct IvatConfig {
  double threshold = 0.2;    // T_alpha
  double epsilon = 1.0;      // radius on the input representation X
  double xi = -1.0;          // probe scale; negative selects 1e-6 * sqrt(dim X)
  int power_iterations = 1;  // K
  double beta = 1.0;         // weight of the smoothness term

  void validate() const;
  double probe_scale(std::size_t dim) const;
};

/// Counts flat-gradient fallbacks across perturbation estimates.
struct PerturbationStats {
  std::size_t estimated = 0;
  std::size_t flat = 0;
};

/// Indices i with alpha_i < threshold. A singleton bag (alpha = 1) yields none.
std::vector<std::size_t> select_noisy(std::span<const double> alpha, double threshold);

/// epsilon * g / ||g||, or zeros when ||g|| < 1e-12 (reported through `flat`).
Tensor scale_to_norm(Tensor g, double epsilon, bool* flat = nullptr);

/// Gradient of the divergence with respect to the probe r, evaluated at r.
using ProbeGradient = std::function<Tensor(const Tensor& r)>;

struct PowerIteration {
  Tensor direction;  // unit L2 norm
  bool flat = false;
};

/// K rounds of d <- g / ||g|| with g = grad_at(xi * d), starting from unit d0.
/// If ||g|| < 1e-12 the previous direction is kept and `flat` is set.
PowerIteration power_iteration(Tensor d0, const ProbeGradient& grad_at, double xi, int iterations);

/// Standard-normal draw on real-token rows, zero on pads, normalized to unit norm.
Tensor random_unit_direction(const FeaturizedInstance& inst, std::size_t cols, Rng& rng);
/// Unit-norm standard-normal draw over every entry.
Tensor random_unit_direction(std::size_t rows, std::size_t cols, Rng& rng);

/// p(y | x) for one instance treated as a bag of one: classify(encode(x)).
ag::Var instance_distribution(const BoundModel& m, ag::Var x, const FeaturizedInstance& inst);

/// Detached p(y | x) at the current parameters.
Tensor clean_distribution(const ModelParams& params, const FeaturizedInstance& inst);

/// Virtual adversarial direction on X, scaled to norm epsilon, pads zeroed.
/// `x` is the current embedding matrix of `inst`; `p_clean` its detached output.
Tensor estimate_vadv(const ModelParams& params, const Tensor& x, const FeaturizedInstance& inst, const Tensor& p_clean,
                     const IvatConfig& config, Rng& rng, PerturbationStats* stats = nullptr);

/// An instance scheduled for a smoothness penalty. Carries no relation label.
struct SmoothedInstance {
  ag::Var x;
  const FeaturizedInstance* inst = nullptr;
  Tensor p_clean;
  Tensor perturbation;
};

/// Mean over items of KL[p_clean || p(y | x + d)]; 0 when there are none.
ag::Var lds_x_loss(ag::Graph& g, const BoundModel& m, std::span<const SmoothedInstance> items);

// ---- instance-level adversarial training (ablation variants) -----------------

/// Fast-gradient direction on X for -log p(relation | x), scaled to epsilon.
Tensor estimate_instance_adv(const ModelParams& params, const Tensor& x, const FeaturizedInstance& inst, int relation,
                             double epsilon, PerturbationStats* stats = nullptr);

struct AdversarialInstance {
  ag::Var x;
  const FeaturizedInstance* inst = nullptr;
  int relation = 0;
  Tensor perturbation;
};

/// Mean over items of -log p(relation | x + d); 0 when there are none.
ag::Var instance_at_loss(ag::Graph& g, const BoundModel& m, std::span<const AdversarialInstance> items);

}  // namespace dsre
