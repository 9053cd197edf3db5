#include "dsre/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dsre/random.hpp"
#include "json.hpp"

namespace dsre {

using nlohmann::json;

// ---- relation vocabulary ---------------------------------------------------

RelationVocab::RelationVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty() || names_.front() != "NA") throw CorpusError("relation vocabulary must start with NA");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw CorpusError("duplicate relation name '" + names_[i] + "'");
    }
  }
}

RelationVocab RelationVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open relation vocabulary " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    names.push_back(line);
  }
  return RelationVocab(std::move(names));
}

void RelationVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& n : names_) out << n << '\n';
}

int RelationVocab::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CorpusError("unknown relation '" + name + "'");
  return it->second;
}

// ---- JSON lines ------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

namespace {

Entity parse_entity(const json& j, const char* which, std::size_t n_tokens, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  if (!j.is_object()) throw CorpusError(where + "'" + which + "' must be an object");
  Entity e;
  e.name = j.at("name").get<std::string>();
  e.id = j.at("id").get<std::string>();
  const auto& pos = j.at("pos");
  if (!pos.is_array() || pos.size() != 2) throw CorpusError(where + "'" + which + ".pos' must be [start,end]");
  e.span = {pos[0].get<int>(), pos[1].get<int>()};
  if (e.span.start < 0 || e.span.end <= e.span.start || static_cast<std::size_t>(e.span.end) > n_tokens) {
    throw CorpusError(where + "'" + which + "' span [" + std::to_string(e.span.start) + "," +
                      std::to_string(e.span.end) + ") outside " + std::to_string(n_tokens) + " tokens");
  }
  return e;
}

json entity_json(const Entity& e) {
  return json{{"name", e.name}, {"id", e.id}, {"pos", {e.span.start, e.span.end}}};
}

}  // namespace

Instance parse_instance(const std::string& line, const RelationVocab& relations, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  try {
    const json j = json::parse(line);
    Instance inst;
    inst.tokens = tokenize(j.at("text").get<std::string>());
    inst.head = parse_entity(j.at("h"), "h", inst.tokens.size(), line_no);
    inst.tail = parse_entity(j.at("t"), "t", inst.tokens.size(), line_no);
    if (inst.head.span.start < inst.tail.span.end && inst.tail.span.start < inst.head.span.end) {
      throw CorpusError(where + "head and tail spans overlap");
    }
    inst.relation = relations.id(j.at("relation").get<std::string>());
    return inst;
  } catch (const CorpusError& e) {
    const std::string msg = e.what();
    if (msg.rfind("line ", 0) == 0) throw;
    throw CorpusError(where + msg);
  } catch (const json::exception& e) {
    throw CorpusError(where + e.what());
  }
}

std::string format_instance(const Instance& inst, const RelationVocab& relations) {
  std::string text;
  for (std::size_t i = 0; i < inst.tokens.size(); ++i) {
    if (i) text += ' ';
    text += inst.tokens[i];
  }
  json j{{"text", text},
         {"h", entity_json(inst.head)},
         {"t", entity_json(inst.tail)},
         {"relation", relations.name(inst.relation)}};
  return j.dump();
}

std::vector<Bag> group_bags(const std::vector<Instance>& instances, Split split) {
  std::vector<Bag> bags;
  std::map<BagKey, std::size_t> index;
  for (const Instance& inst : instances) {
    BagKey key{inst.head.id, inst.tail.id, split == Split::Train ? inst.relation : -1};
    auto [it, fresh] = index.emplace(key, bags.size());
    if (fresh) {
      Bag b;
      b.key = key;
      bags.push_back(std::move(b));
    }
    Bag& bag = bags[it->second];
    bag.instances.push_back(inst);
    if (std::find(bag.relations.begin(), bag.relations.end(), inst.relation) == bag.relations.end()) {
      bag.relations.push_back(inst.relation);
    }
  }
  // A test pair mentioned with NA and a relation holds only the relation fact.
  if (split == Split::Test) {
    for (Bag& b : bags) {
      if (b.relations.size() > 1) std::erase(b.relations, 0);
    }
  }
  return bags;
}

std::vector<Bag> load_corpus(const std::filesystem::path& path, Split split, const RelationVocab& relations,
                             LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    instances.push_back(parse_instance(line, relations, line_no));
  }
  auto bags = group_bags(instances, split);
  if (stats != nullptr) *stats = {line_no, instances.size(), bags.size()};
  return bags;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Bag>& bags, const RelationVocab& relations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const Bag& b : bags) {
    for (const Instance& inst : b.instances) out << format_instance(inst, relations) << '\n';
  }
}

std::size_t instance_count(const std::vector<Bag>& bags) {
  std::size_t n = 0;
  for (const Bag& b : bags) n += b.instances.size();
  return n;
}

// ---- synthetic corpora -----------------------------------------------------

void SynthConfig::validate() const {
  if (n_relations < 2) throw CorpusError("synth: need at least one relation besides NA");
  if (n_train_pairs < 1 || n_test_pairs < 1) throw CorpusError("synth: need at least one entity pair per split");
  if (vocab_size < 1) throw CorpusError("synth: vocab_size must be positive");
  if (noise_rate < 0.0 || noise_rate > 1.0) throw CorpusError("synth: noise_rate outside [0,1]");
  if (noise_to_na < 0.0 || noise_to_na > 1.0) throw CorpusError("synth: noise_to_na outside [0,1]");
  if (na_pair_fraction < 0.0 || na_pair_fraction > 1.0) throw CorpusError("synth: na_pair_fraction outside [0,1]");
  if (singleton_fraction < 0.0 || singleton_fraction > 1.0) throw CorpusError("synth: singleton_fraction outside [0,1]");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) throw CorpusError("synth: distractor_rate outside [0,1]");
  if (max_bag_size < 1) throw CorpusError("synth: max_bag_size must be positive");
  if (triggers_per_relation < 1) throw CorpusError("synth: triggers_per_relation must be positive");
  if (max_context < 0) throw CorpusError("synth: max_context must be non-negative");
}

namespace {

std::vector<double> zipf_cdf(std::size_t n, double exponent) {
  std::vector<double> cdf(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += 1.0 / std::pow(static_cast<double>(i + 1), exponent);
    cdf[i] = acc;
  }
  return cdf;
}

class SentenceMaker {
 public:
  SentenceMaker(const SynthConfig& c, Rng& rng)
      : c_(c), rng_(rng), filler_cdf_(zipf_cdf(static_cast<std::size_t>(c.vocab_size), 1.0)),
        trigger_cdf_(zipf_cdf(static_cast<std::size_t>(c.triggers_per_relation), c.trigger_zipf)) {}

  Instance make(const std::string& head, const std::string& tail, int expressed, int bag_label) {
    Instance inst;
    inst.relation = bag_label;
    auto& t = inst.tokens;
    const int ctx = c_.max_context;
    const int half = std::max(1, ctx / 2);

    std::vector<std::string> before = fillers(static_cast<int>(rng_.index(static_cast<std::size_t>(ctx) + 1)));
    std::vector<std::string> after = fillers(static_cast<int>(rng_.index(static_cast<std::size_t>(ctx) + 1)));
    if (rng_.bernoulli(c_.distractor_rate)) {
      int other = 1 + static_cast<int>(rng_.index(static_cast<std::size_t>(c_.n_relations - 1)));
      if (other == expressed) other = 1 + other % (c_.n_relations - 1);
      auto& side = rng_.bernoulli(0.5) ? before : after;
      side.insert(side.begin() + static_cast<std::ptrdiff_t>(rng_.index(side.size() + 1)), trigger(other));
    }
    std::vector<std::string> middle = fillers(static_cast<int>(rng_.index(static_cast<std::size_t>(half) + 1)));
    if (expressed != 0) {
      middle.push_back(trigger(expressed));
      auto more = fillers(static_cast<int>(rng_.index(static_cast<std::size_t>(half) + 1)));
      middle.insert(middle.end(), more.begin(), more.end());
    }

    const bool head_first = rng_.bernoulli(0.5);
    t = before;
    const int first = static_cast<int>(t.size());
    t.push_back(head_first ? head : tail);
    t.insert(t.end(), middle.begin(), middle.end());
    const int second = static_cast<int>(t.size());
    t.push_back(head_first ? tail : head);
    t.insert(t.end(), after.begin(), after.end());

    inst.head = {head, head, head_first ? Span{first, first + 1} : Span{second, second + 1}};
    inst.tail = {tail, tail, head_first ? Span{second, second + 1} : Span{first, first + 1}};
    return inst;
  }

 private:
  std::vector<std::string> fillers(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng_.categorical(filler_cdf_)));
    return out;
  }
  std::string trigger(int relation) {
    return "r" + std::to_string(relation) + "t" + std::to_string(rng_.categorical(trigger_cdf_));
  }

  const SynthConfig& c_;
  Rng& rng_;
  std::vector<double> filler_cdf_;
  std::vector<double> trigger_cdf_;
};

}  // namespace

SynthCorpus generate_synth(const SynthConfig& config) {
  config.validate();
  SynthCorpus out;
  std::vector<std::string> names{"NA"};
  for (int r = 1; r < config.n_relations; ++r) names.push_back("rel" + std::to_string(r));
  out.relations = RelationVocab(names);

  Rng rng(split_seed(config.seed, "synth"));
  SentenceMaker maker(config, rng);
  const std::size_t n_entities = config.n_entities > 0
                                     ? static_cast<std::size_t>(config.n_entities)
                                     : static_cast<std::size_t>(std::max(config.n_train_pairs, 2));
  std::set<std::pair<std::size_t, std::size_t>> used;
  const int n_rel = config.n_relations;

  auto make_split = [&](int n_pairs, std::vector<Bag>& bags, std::vector<std::vector<int>>& truth) {
    for (int k = 0; k < n_pairs; ++k) {
      std::size_t h = 0, t = 0;
      do {
        h = rng.index(n_entities);
        t = rng.index(n_entities);
      } while (h == t || used.count({h, t}) != 0);
      used.insert({h, t});
      const std::string head = "e" + std::to_string(h);
      const std::string tail = "e" + std::to_string(t);

      const int label = rng.bernoulli(config.na_pair_fraction)
                            ? 0
                            : 1 + static_cast<int>(rng.index(static_cast<std::size_t>(n_rel - 1)));
      std::size_t size = 1;
      if (!rng.bernoulli(config.singleton_fraction)) {
        size = 2;
        while (static_cast<int>(size) < config.max_bag_size && rng.bernoulli(config.bag_size_decay)) ++size;
      }
      size = std::min<std::size_t>(size, static_cast<std::size_t>(config.max_bag_size));

      Bag bag;
      bag.relations = {label};
      std::vector<int> expressed_all;
      for (std::size_t i = 0; i < size; ++i) {
        int expressed = label;
        if (rng.bernoulli(config.noise_rate)) {
          if (label != 0 && rng.bernoulli(config.noise_to_na)) {
            expressed = 0;
          } else if (label == 0) {
            expressed = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(n_rel - 1)));
          } else if (n_rel > 2) {
            expressed = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(n_rel - 2)));
            if (expressed >= label) ++expressed;
          } else {
            expressed = 0;
          }
        }
        bag.instances.push_back(maker.make(head, tail, expressed, label));
        expressed_all.push_back(expressed);
      }
      bag.key = {head, tail, label};
      bags.push_back(std::move(bag));
      truth.push_back(std::move(expressed_all));
    }
  };

  make_split(config.n_train_pairs, out.train, out.train_truth);
  make_split(config.n_test_pairs, out.test, out.test_truth);
  for (Bag& b : out.test) b.key.relation = -1;
  return out;
}

double noisy_fraction(const std::vector<Bag>& bags, const std::vector<std::vector<int>>& truth) {
  std::size_t noisy = 0, total = 0;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (std::size_t i = 0; i < bags[b].instances.size(); ++i) {
      ++total;
      if (truth.at(b).at(i) != bags[b].label()) ++noisy;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(noisy) / static_cast<double>(total);
}

// ---- filtering -------------------------------------------------------------

FilterResult filter_low_attention(const std::vector<Bag>& bags, const std::vector<std::vector<double>>& scores,
                                  double threshold) {
  if (scores.size() != bags.size()) {
    throw CorpusError("filter: " + std::to_string(scores.size()) + " score rows for " + std::to_string(bags.size()) +
                      " bags");
  }
  FilterResult res;
  for (std::size_t b = 0; b < bags.size(); ++b) {
    const Bag& bag = bags[b];
    if (scores[b].size() != bag.instances.size()) {
      throw CorpusError("filter: bag " + std::to_string(b) + " is missing instance scores");
    }
    Bag kept;
    kept.key = bag.key;
    kept.relations = bag.relations;
    for (std::size_t i = 0; i < bag.instances.size(); ++i) {
      ++res.total_instances;
      if (scores[b][i] < threshold) {
        ++res.removed_instances;
      } else {
        kept.instances.push_back(bag.instances[i]);
      }
    }
    if (kept.instances.empty()) {
      ++res.dropped_bags;
    } else {
      res.bags.push_back(std::move(kept));
    }
  }
  return res;
}

}  // namespace dsre
