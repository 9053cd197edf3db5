#pragma once

#include <cstddef>

#include "dsre/autograd.hpp"
#include "dsre/featurizer.hpp"

namespace dsre {

class Rng;

struct EncoderConfig {
  std::size_t kernel_width = 3;  // u
  std::size_t kernels = 230;     // p

  std::size_t output_dim() const { return 3 * kernels; }
  void validate() const;
};

struct EncoderParams {
  ag::Parameter weight;  // p x (u * d), one flattened window per row
  ag::Parameter bias;    // 1 x p

  static EncoderParams init(const EncoderConfig& config, std::size_t input_dim, Rng& rng);
};

/// C[t, k] = <X window centred on t, W_k> + b_k over a zero-padded X.
ag::Var convolve(ag::Var x, ag::Var weight, ag::Var bias, std::size_t kernel_width);

/// Pieces [0, h], (h, t], (t, L-1] with h <= t the entity positions and L the
/// real length. When both entities sit on the same token the middle piece pools
/// that token; an empty trailing piece pools to 0.
ag::PoolSegments pool_segments(std::size_t head, std::size_t tail, std::size_t length);

/// tanh(piecewise max pool(C)) as a 1 x 3p row.
ag::Var piecewise_pool(ag::Var c, const FeaturizedInstance& inst);

/// Full sentence encoder: X -> H.
ag::Var encode(ag::Var x, const FeaturizedInstance& inst, ag::Var weight, ag::Var bias, std::size_t kernel_width);

}  // namespace dsre
