#include "dsre/pcnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dsre/random.hpp"

namespace dsre {

void EncoderConfig::validate() const {
  if (kernel_width < 3 || kernel_width % 2 == 0) throw std::invalid_argument("encoder: kernel width must be odd and >= 3");
  if (kernels < 1) throw std::invalid_argument("encoder: need at least one kernel");
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::size_t input_dim, Rng& rng) {
  const std::size_t fan_in = config.kernel_width * input_dim;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + config.kernels));
  Tensor w(config.kernels, fan_in);
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return {ag::Parameter("conv_weight", std::move(w)), ag::Parameter("conv_bias", Tensor(1, config.kernels))};
}

ag::Var convolve(ag::Var x, ag::Var weight, ag::Var bias, std::size_t kernel_width) {
  return ag::linear(ag::unfold(x, kernel_width), weight, bias);
}

ag::PoolSegments pool_segments(std::size_t head, std::size_t tail, std::size_t length) {
  const std::size_t h = std::min(head, tail);
  const std::size_t t = std::max(head, tail);
  if (length == 0 || t >= length) {
    throw std::invalid_argument("pool_segments: entity position " + std::to_string(t) + " outside length " +
                                std::to_string(length));
  }
  ag::PoolSegments s;
  s.begin = {0, h + 1, t + 1};
  s.end = {h + 1, t + 1, length};
  if (h == t) {
    s.begin[1] = h;
    s.end[1] = h + 1;
  }
  return s;
}

ag::Var piecewise_pool(ag::Var c, const FeaturizedInstance& inst) {
  return ag::tanh(ag::piecewise_max_pool(c, pool_segments(inst.head, inst.tail, inst.length)));
}

ag::Var encode(ag::Var x, const FeaturizedInstance& inst, ag::Var weight, ag::Var bias, std::size_t kernel_width) {
  return piecewise_pool(convolve(x, weight, bias, kernel_width), inst);
}

}  // namespace dsre
