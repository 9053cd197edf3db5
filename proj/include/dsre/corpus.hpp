#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dsre {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token range [start, end) inside Instance::tokens.
struct Span {
  int start = 0;
  int end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

struct Entity {
  std::string name;
  std::string id;
  Span span;
  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Instance {
  std::vector<std::string> tokens;
  Entity head;
  Entity tail;
  int relation = 0;  // 0 is NA
  friend bool operator==(const Instance&, const Instance&) = default;
};

enum class Split { Train, Test };

/// Train bags are keyed by (head, tail, relation); test bags by the entity
/// pair alone, with relation = -1 and the pair's facts in Bag::relations.
struct BagKey {
  std::string head;
  std::string tail;
  int relation = 0;
  auto operator<=>(const BagKey&) const = default;
  std::string pair() const { return head + "#" + tail; }
};

struct Bag {
  BagKey key;
  std::vector<Instance> instances;
  /// Relation facts the bag is labelled with. One entry for train bags; the
  /// set of distinct relations over the pair's instances for test bags.
  std::vector<int> relations;
  int label() const { return relations.empty() ? 0 : relations.front(); }
};

class RelationVocab {
 public:
  RelationVocab() = default;
  explicit RelationVocab(std::vector<std::string> names);

  static RelationVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return names_.size(); }
  int id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t instances = 0;
  std::size_t bags = 0;
};

/// Splits on ASCII whitespace.
std::vector<std::string> tokenize(const std::string& text);

/// Parses one JSON-lines record. `line_no` only feeds error messages.
Instance parse_instance(const std::string& line, const RelationVocab& relations, std::size_t line_no);
std::string format_instance(const Instance& inst, const RelationVocab& relations);

/// Groups instances into bags in order of first appearance.
std::vector<Bag> group_bags(const std::vector<Instance>& instances, Split split);

std::vector<Bag> load_corpus(const std::filesystem::path& path, Split split, const RelationVocab& relations,
                             LoadStats* stats = nullptr);
void write_corpus(const std::filesystem::path& path, const std::vector<Bag>& bags, const RelationVocab& relations);

std::size_t instance_count(const std::vector<Bag>& bags);

// ---- synthetic corpora -----------------------------------------------------

struct SynthConfig {
  int n_relations = 6;          // including NA
  int n_train_pairs = 2000;
  int n_test_pairs = 1000;
  int vocab_size = 400;         // filler vocabulary
  int n_entities = 0;           // 0: one per train pair
  double na_pair_fraction = 0.5;
  double singleton_fraction = 0.4;
  int max_bag_size = 8;
  double bag_size_decay = 0.6;  // geometric tail for multi-instance bags
  double noise_rate = 0.3;
  double noise_to_na = 0.5;     // share of noisy instances that express nothing
  int triggers_per_relation = 8;
  double trigger_zipf = 1.0;
  double distractor_rate = 0.3; // other-relation trigger outside the entity pair
  int max_context = 4;          // filler tokens before/between/after
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthCorpus {
  RelationVocab relations;
  std::vector<Bag> train;
  std::vector<Bag> test;
  /// Relation each instance actually expresses, [bag][instance]. Diagnostics only.
  std::vector<std::vector<int>> train_truth;
  std::vector<std::vector<int>> test_truth;
};

SynthCorpus generate_synth(const SynthConfig& config);

/// Fraction of instances whose expressed relation differs from the bag label.
double noisy_fraction(const std::vector<Bag>& bags, const std::vector<std::vector<int>>& truth);

// ---- low-attention filtering -----------------------------------------------

struct FilterResult {
  std::vector<Bag> bags;
  std::size_t total_instances = 0;
  std::size_t removed_instances = 0;
  std::size_t dropped_bags = 0;
  double removed_fraction() const {
    return total_instances == 0 ? 0.0 : static_cast<double>(removed_instances) / static_cast<double>(total_instances);
  }
};

/// Removes instances with score < threshold. `scores[b][i]` scores instance i
/// of bag b. Bags left empty are dropped.
FilterResult filter_low_attention(const std::vector<Bag>& bags, const std::vector<std::vector<double>>& scores,
                                  double threshold);

}  // namespace dsre
