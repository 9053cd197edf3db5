#include "dsre/featurizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "dsre/random.hpp"

namespace dsre {

void FeaturizerConfig::validate() const {
  if (word_dim < 1 || pos_dim < 1) throw std::invalid_argument("featurizer: embedding dims must be positive");
  if (max_len < 3) throw std::invalid_argument("featurizer: max_len must be >= 3");
  if (max_distance < 1) throw std::invalid_argument("featurizer: max_distance must be >= 1");
}

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
}

Vocab::Vocab(const std::vector<std::string>& tokens_after_specials) : Vocab() {
  for (const auto& t : tokens_after_specials) add(t);
}

void Vocab::add(const std::string& token) {
  if (index_.emplace(token, static_cast<int>(tokens_.size())).second) tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<Bag>& bags, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const Bag& b : bags) {
    for (const Instance& inst : b.instances) {
      for (const auto& tok : inst.tokens) {
        if (counts[tok]++ == 0) order.push_back(tok);
      }
    }
  }
  Vocab v;
  for (const auto& tok : order) {
    if (counts[tok] >= min_count) v.add(tok);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

int relative_distance(int token, int entity, int max_distance) {
  return std::clamp(token - entity, -max_distance, max_distance);
}

FeaturizedInstance featurize(const Instance& inst, const FeaturizerConfig& config, const Vocab& vocab) {
  const std::size_t l = config.max_len;
  const int head = inst.head.span.start;
  const int tail = inst.tail.span.start;
  if (head < 0 || tail < 0 || static_cast<std::size_t>(head) >= l || static_cast<std::size_t>(tail) >= l) {
    throw FeaturizeError("entity beyond truncation length " + std::to_string(l));
  }
  FeaturizedInstance f;
  f.length = std::min(l, inst.tokens.size());
  f.head = static_cast<std::size_t>(head);
  f.tail = static_cast<std::size_t>(tail);
  f.word_ids.assign(l, Vocab::kPad);
  f.pos1_ids.assign(l, 0);
  f.pos2_ids.assign(l, 0);
  f.mask.assign(l, 0);
  const int offset = config.max_distance + 1;
  for (std::size_t i = 0; i < f.length; ++i) {
    const int ti = static_cast<int>(i);
    f.word_ids[i] = vocab.id(inst.tokens[i]);
    f.pos1_ids[i] = relative_distance(ti, head, config.max_distance) + offset;
    f.pos2_ids[i] = relative_distance(ti, tail, config.max_distance) + offset;
    f.mask[i] = 1;
  }
  return f;
}

std::vector<FeaturizedBag> featurize_bags(const std::vector<Bag>& bags, const FeaturizerConfig& config,
                                          const Vocab& vocab, FeaturizeStats* stats) {
  std::vector<FeaturizedBag> out;
  FeaturizeStats local;
  out.reserve(bags.size());
  for (const Bag& b : bags) {
    FeaturizedBag fb;
    fb.relations = b.relations;
    fb.pair = b.key.pair();
    for (const Instance& inst : b.instances) {
      try {
        fb.instances.push_back(featurize(inst, config, vocab));
      } catch (const FeaturizeError&) {
        ++local.rejected_instances;
      }
    }
    if (fb.instances.empty()) {
      ++local.dropped_bags;
      continue;
    }
    out.push_back(std::move(fb));
  }
  if (stats != nullptr) *stats = local;
  return out;
}

EmbeddingTables EmbeddingTables::init(const FeaturizerConfig& config, std::size_t vocab_size, Rng& rng) {
  auto uniform_table = [&](const char* name, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    for (double& v : t.values()) v = rng.uniform(-0.25, 0.25);
    return ag::Parameter(name, std::move(t));
  };
  EmbeddingTables e;
  e.word = uniform_table("word_embedding", vocab_size, config.word_dim);
  e.pos1 = uniform_table("pos1_embedding", config.position_rows(), config.pos_dim);
  e.pos2 = uniform_table("pos2_embedding", config.position_rows(), config.pos_dim);
  return e;
}

std::size_t load_pretrained(const std::filesystem::path& path, const Vocab& vocab, ag::Parameter& word_table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open word vectors " + path.string());
  const std::size_t dim = word_table.value.cols();
  std::size_t hits = 0;
  std::size_t line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    std::vector<double> vals;
    double v = 0.0;
    while (ss >> v) vals.push_back(v);
    if (vals.size() != dim) {
      throw std::runtime_error("word vectors line " + std::to_string(line_no) + ": expected " +
                               std::to_string(dim) + " values, got " + std::to_string(vals.size()));
    }
    const int id = vocab.id(tok);
    if (id == Vocab::kUnk && tok != "<unk>") continue;
    std::copy(vals.begin(), vals.end(), word_table.value.row(static_cast<std::size_t>(id)).begin());
    ++hits;
  }
  return hits;
}

ag::Var embed(const FeaturizedInstance& inst, ag::Var word, ag::Var pos1, ag::Var pos2) {
  const std::array<ag::Var, 3> parts{ag::gather_rows(word, inst.word_ids), ag::gather_rows(pos1, inst.pos1_ids),
                                     ag::gather_rows(pos2, inst.pos2_ids)};
  return ag::concat_cols(parts);
}

}  // namespace dsre
