#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsre/autograd.hpp"

namespace dsre {

struct SkippedCoordinate {
  std::string parameter;
  std::size_t index = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  /// Coordinates whose +-h probes changed a max-pool winner (non-smooth there).
  std::vector<SkippedCoordinate> skipped;
};

using Objective = std::function<ag::Var(ag::Graph&)>;

/// Compares reverse-mode gradients of a scalar objective against central
/// differences, coordinate by coordinate, over every listed parameter:
///   max |analytic - central| / max(|analytic|, |central|, 1e-8).
/// The objective must bind parameters through Graph::param so both the
/// training-mode and frozen-mode evaluations see the same function.
GradCheckReport finite_diff_check(const Objective& objective, std::span<ag::Parameter* const> params,
                                  double h);

}  // namespace dsre
