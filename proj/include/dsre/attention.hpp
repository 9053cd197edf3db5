#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsre/autograd.hpp"

namespace dsre {

class Rng;

struct AttentionParams {
  ag::Parameter diag;    // 1 x 3p, diagonal of A
  ag::Parameter query;   // n_r x 3p, row r is q_r
  ag::Parameter weight;  // n_r x 3p, classifier M
  ag::Parameter bias;    // 1 x n_r

  static AttentionParams init(std::size_t feature_dim, std::size_t n_relations, Rng& rng);
};

struct BoundAttention {
  ag::Var diag, query, weight, bias;
};

/// Softmax over f_i = h_i diag(A) q_r for the rows of `h` (n x 3p). Returns 1 x n.
ag::Var attention_scores(ag::Var h, int relation, const BoundAttention& att);

/// z = sum_i alpha_i h_i, 1 x 3p.
ag::Var bag_repr(ag::Var h, ag::Var alpha);

/// o = M z + b.
ag::Var logits(ag::Var z, const BoundAttention& att);
/// p(r | z) = softmax(M z + b).
ag::Var classify(ag::Var z, const BoundAttention& att);
/// log p(r | z), evaluated stably.
ag::Var classify_log(ag::Var z, const BoundAttention& att);

/// -log p(relation | z).
ag::Var bag_nll(ag::Var z, int relation, const BoundAttention& att);

/// Mean of the scalars in `terms`.
ag::Var mean(std::span<const ag::Var> terms);

}  // namespace dsre
