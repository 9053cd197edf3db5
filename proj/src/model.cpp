#include "dsre/model.hpp"

#include <stdexcept>

#include "dsre/random.hpp"

namespace dsre {

void ModelConfig::validate() const {
  featurizer.validate();
  encoder.validate();
  if (n_relations < 2) throw std::invalid_argument("model: need NA plus at least one relation");
}

ModelParams ModelParams::init(const ModelConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.embeddings = EmbeddingTables::init(config.featurizer, vocab_size, rng);
  p.encoder = EncoderParams::init(config.encoder, config.featurizer.input_dim(), rng);
  p.attention = AttentionParams::init(config.feature_dim(), config.n_relations, rng);
  return p;
}

std::vector<ag::Parameter*> ModelParams::parameters() {
  return {&embeddings.word,   &embeddings.pos1,  &embeddings.pos2,   &encoder.weight,   &encoder.bias,
          &attention.diag,    &attention.query,  &attention.weight,  &attention.bias};
}

std::vector<const ag::Parameter*> ModelParams::parameters() const {
  return {&embeddings.word,   &embeddings.pos1,  &embeddings.pos2,   &encoder.weight,   &encoder.bias,
          &attention.diag,    &attention.query,  &attention.weight,  &attention.bias};
}

void ModelParams::zero_grad() {
  for (ag::Parameter* p : parameters()) p->zero_grad();
}

namespace {

template <typename Params>
BoundModel bind_impl(ag::Graph& g, Params& p) {
  BoundModel m;
  m.word = g.param(p.embeddings.word);
  m.pos1 = g.param(p.embeddings.pos1);
  m.pos2 = g.param(p.embeddings.pos2);
  m.conv_weight = g.param(p.encoder.weight);
  m.conv_bias = g.param(p.encoder.bias);
  m.attention = {g.param(p.attention.diag), g.param(p.attention.query), g.param(p.attention.weight),
                 g.param(p.attention.bias)};
  m.kernel_width = p.config.encoder.kernel_width;
  return m;
}

}  // namespace

BoundModel BoundModel::bind(ag::Graph& g, ModelParams& params) { return bind_impl(g, params); }
BoundModel BoundModel::bind(ag::Graph& g, const ModelParams& params) { return bind_impl(g, params); }

ag::Var BoundModel::embed(const FeaturizedInstance& inst) const { return dsre::embed(inst, word, pos1, pos2); }

ag::Var BoundModel::encode(ag::Var x, const FeaturizedInstance& inst) const {
  return dsre::encode(x, inst, conv_weight, conv_bias, kernel_width);
}

BagForward forward_bag(const BoundModel& m, const FeaturizedBag& bag, int query_relation) {
  if (bag.instances.empty()) throw std::invalid_argument("forward_bag: empty bag");
  BagForward f;
  std::vector<ag::Var> rows;
  rows.reserve(bag.instances.size());
  for (const FeaturizedInstance& inst : bag.instances) {
    ag::Var x = m.embed(inst);
    f.inputs.push_back(x);
    rows.push_back(m.encode(x, inst));
  }
  f.features = rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
  f.alpha = attention_scores(f.features, query_relation, m.attention);
  f.z = bag_repr(f.features, f.alpha);
  return f;
}

ag::Var mil_loss(const BoundModel& m, std::span<const FeaturizedBag> bags) {
  std::vector<ag::Var> terms;
  terms.reserve(bags.size());
  for (const FeaturizedBag& b : bags) {
    const int r = b.relations.at(0);
    terms.push_back(bag_nll(forward_bag(m, b, r).z, r, m.attention));
  }
  return mean(terms);
}

std::vector<double> infer_bag(const ModelParams& params, const FeaturizedBag& bag) {
  if (bag.instances.empty()) throw std::invalid_argument("infer_bag: empty bag");
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  std::vector<ag::Var> rows;
  for (const FeaturizedInstance& inst : bag.instances) rows.push_back(m.encode(m.embed(inst), inst));
  ag::Var h = rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
  std::vector<double> scores(params.config.n_relations);
  for (std::size_t r = 0; r < scores.size(); ++r) {
    ag::Var z = bag_repr(h, attention_scores(h, static_cast<int>(r), m.attention));
    scores[r] = classify(z, m.attention).value()[r];
  }
  return scores;
}

Tensor classify_value(const ModelParams& params, const Tensor& z) {
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  return classify(g.constant(z), m.attention).value();
}

std::vector<double> gold_attention(const ModelParams& params, const FeaturizedBag& bag) {
  ag::Graph g(ag::Mode::Frozen);
  const BoundModel m = BoundModel::bind(g, params);
  return forward_bag(m, bag, bag.relations.at(0)).alpha.value().values();
}

}  // namespace dsre
