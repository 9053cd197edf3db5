#pragma once

#include <cstddef>
#include <vector>

#include "dsre/featurizer.hpp"
#include "dsre/model.hpp"
#include "dsre/random.hpp"

namespace dsre::fixtures {

inline ModelConfig tiny_config(std::size_t n_relations = 3) {
  ModelConfig c;
  c.featurizer.word_dim = 4;
  c.featurizer.pos_dim = 2;
  c.featurizer.max_len = 8;
  c.featurizer.max_distance = 5;
  c.encoder.kernel_width = 3;
  c.encoder.kernels = 6;
  c.n_relations = n_relations;
  return c;
}

inline constexpr std::size_t kTinyVocab = 12;

inline FeaturizedInstance random_instance(const ModelConfig& c, Rng& rng, std::size_t vocab = kTinyVocab) {
  const std::size_t l = c.featurizer.max_len;
  FeaturizedInstance f;
  f.length = 2 + rng.index(l - 1);
  f.head = rng.index(f.length);
  do {
    f.tail = rng.index(f.length);
  } while (f.tail == f.head);
  f.word_ids.assign(l, Vocab::kPad);
  f.pos1_ids.assign(l, 0);
  f.pos2_ids.assign(l, 0);
  f.mask.assign(l, 0);
  const int offset = c.featurizer.max_distance + 1;
  for (std::size_t i = 0; i < f.length; ++i) {
    const int ti = static_cast<int>(i);
    f.word_ids[i] = 1 + static_cast<int>(rng.index(vocab - 1));
    f.pos1_ids[i] = relative_distance(ti, static_cast<int>(f.head), c.featurizer.max_distance) + offset;
    f.pos2_ids[i] = relative_distance(ti, static_cast<int>(f.tail), c.featurizer.max_distance) + offset;
    f.mask[i] = 1;
  }
  return f;
}

inline FeaturizedBag random_bag(const ModelConfig& c, Rng& rng, std::size_t size, int relation) {
  FeaturizedBag b;
  for (std::size_t i = 0; i < size; ++i) b.instances.push_back(random_instance(c, rng));
  b.relations = {relation};
  b.pair = "p" + std::to_string(rng.index(1000000));
  return b;
}

inline std::vector<FeaturizedBag> random_bags(const ModelConfig& c, Rng& rng, std::size_t n, std::size_t max_size = 4) {
  std::vector<FeaturizedBag> out;
  for (std::size_t b = 0; b < n; ++b) {
    out.push_back(random_bag(c, rng, 1 + rng.index(max_size), static_cast<int>(rng.index(c.n_relations))));
  }
  return out;
}

/// Tiny model with a nonzero classifier bias so no symmetry hides a bug.
inline ModelParams tiny_model(std::uint64_t seed, std::size_t n_relations = 3) {
  Rng rng(seed);
  ModelParams p = ModelParams::init(tiny_config(n_relations), kTinyVocab, rng);
  for (double& v : p.attention.bias.value.values()) v = rng.uniform(-0.3, 0.3);
  for (double& v : p.attention.diag.value.values()) v = rng.uniform(0.5, 1.5);
  for (double& v : p.encoder.bias.value.values()) v = rng.uniform(-0.3, 0.3);
  return p;
}

}  // namespace dsre::fixtures
