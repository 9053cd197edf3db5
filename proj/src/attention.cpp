#include "dsre/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "dsre/random.hpp"

namespace dsre {

AttentionParams AttentionParams::init(std::size_t feature_dim, std::size_t n_relations, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(feature_dim + n_relations));
  auto uniform = [&](std::size_t r, std::size_t c) {
    Tensor t(r, c);
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
  };
  AttentionParams p;
  p.diag = ag::Parameter("attention_diag", Tensor(1, feature_dim, 1.0));
  p.query = ag::Parameter("relation_query", uniform(n_relations, feature_dim));
  p.weight = ag::Parameter("classifier_weight", uniform(n_relations, feature_dim));
  p.bias = ag::Parameter("classifier_bias", Tensor(1, n_relations));
  return p;
}

ag::Var attention_scores(ag::Var h, int relation, const BoundAttention& att) {
  const int ids[1] = {relation};
  ag::Var q = ag::gather_rows(att.query, ids);
  ag::Var f = ag::matmul_nt(ag::mul(att.diag, q), h);
  return ag::softmax(f);
}

ag::Var bag_repr(ag::Var h, ag::Var alpha) { return ag::matmul(alpha, h); }

ag::Var logits(ag::Var z, const BoundAttention& att) { return ag::linear(z, att.weight, att.bias); }

ag::Var classify(ag::Var z, const BoundAttention& att) { return ag::softmax(logits(z, att)); }

ag::Var classify_log(ag::Var z, const BoundAttention& att) { return ag::log_softmax(logits(z, att)); }

ag::Var bag_nll(ag::Var z, int relation, const BoundAttention& att) {
  return ag::scale(ag::pick(classify_log(z, att), 0, static_cast<std::size_t>(relation)), -1.0);
}

ag::Var mean(std::span<const ag::Var> terms) {
  if (terms.empty()) throw std::invalid_argument("mean: no terms");
  return ag::scale(ag::sum_all(terms), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace dsre
