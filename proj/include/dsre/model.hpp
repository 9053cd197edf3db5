#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsre/attention.hpp"
#include "dsre/autograd.hpp"
#include "dsre/featurizer.hpp"
#include "dsre/pcnn.hpp"

namespace dsre {

class Rng;

struct ModelConfig {
  FeaturizerConfig featurizer;
  EncoderConfig encoder;
  std::size_t n_relations = 53;

  std::size_t feature_dim() const { return encoder.output_dim(); }
  void validate() const;
};

/// Every trainable tensor of the PCNN + selective-attention model.
struct ModelParams {
  ModelConfig config;
  EmbeddingTables embeddings;
  EncoderParams encoder;
  AttentionParams attention;

  static ModelParams init(const ModelConfig& config, std::size_t vocab_size, Rng& rng);

  std::vector<ag::Parameter*> parameters();
  std::vector<const ag::Parameter*> parameters() const;
  void zero_grad();
};

/// Parameters bound as leaves of one graph.
struct BoundModel {
  ag::Var word, pos1, pos2;
  ag::Var conv_weight, conv_bias;
  BoundAttention attention;
  std::size_t kernel_width = 3;

  /// Trainable binding (gradients flow in Train-mode graphs).
  static BoundModel bind(ag::Graph& g, ModelParams& params);
  /// Constant binding.
  static BoundModel bind(ag::Graph& g, const ModelParams& params);

  ag::Var embed(const FeaturizedInstance& inst) const;
  ag::Var encode(ag::Var x, const FeaturizedInstance& inst) const;
};

struct BagForward {
  std::vector<ag::Var> inputs;  // X per instance
  ag::Var features;             // H, n x 3p
  ag::Var alpha;                // 1 x n
  ag::Var z;                    // 1 x 3p
};

/// Encodes every instance of a bag and attends with the given relation query.
BagForward forward_bag(const BoundModel& m, const FeaturizedBag& bag, int query_relation);

/// J = mean over bags of -log p(r_b | z_b), queries set to the gold relation.
ag::Var mil_loss(const BoundModel& m, std::span<const FeaturizedBag> bags);

/// Score per relation: attention with query q_r, then p(r | z_r).
std::vector<double> infer_bag(const ModelParams& params, const FeaturizedBag& bag);

/// Detached p(y | z) at the current parameters.
Tensor classify_value(const ModelParams& params, const Tensor& z);

/// Attention weights of a bag under its gold-relation query, no graph kept.
std::vector<double> gold_attention(const ModelParams& params, const FeaturizedBag& bag);

}  // namespace dsre
