#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsre/autograd.hpp"
#include "dsre/corpus.hpp"

namespace dsre {

class Rng;

struct FeaturizerConfig {
  std::size_t word_dim = 50;  // d_w
  std::size_t pos_dim = 5;    // d_p
  std::size_t max_len = 120;  // l
  int max_distance = 100;     // D

  std::size_t input_dim() const { return word_dim + 2 * pos_dim; }
  /// Rows of each position table: clipped distances, offset by D+1, plus the pad slot 0.
  std::size_t position_rows() const { return static_cast<std::size_t>(2 * max_distance + 3); }
  void validate() const;
};

class FeaturizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Word index with PAD = 0 and UNK = 1.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens_after_specials);

  /// Vocabulary over every token of the bags seen at least `min_count` times,
  /// in first-appearance order.
  static Vocab build(const std::vector<Bag>& bags, std::size_t min_count = 1);

  int id(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct FeaturizedInstance {
  std::vector<int> word_ids;
  std::vector<int> pos1_ids;
  std::vector<int> pos2_ids;
  std::vector<std::uint8_t> mask;  // 1 for real tokens
  std::size_t length = 0;          // real tokens after truncation
  std::size_t head = 0;
  std::size_t tail = 0;
};

/// i - e clipped to [-D, D].
int relative_distance(int token, int entity, int max_distance);

/// Fixed-length ids for one instance. Entity positions are span starts.
FeaturizedInstance featurize(const Instance& inst, const FeaturizerConfig& config, const Vocab& vocab);

struct FeaturizedBag {
  std::vector<FeaturizedInstance> instances;
  std::vector<int> relations;
  std::string pair;
};

struct FeaturizeStats {
  std::size_t rejected_instances = 0;
  std::size_t dropped_bags = 0;
};

/// Featurizes every bag; rejected instances are skipped and counted, and bags
/// left empty are dropped.
std::vector<FeaturizedBag> featurize_bags(const std::vector<Bag>& bags, const FeaturizerConfig& config,
                                          const Vocab& vocab, FeaturizeStats* stats = nullptr);

struct EmbeddingTables {
  ag::Parameter word;  // vocab x d_w
  ag::Parameter pos1;  // (2D+3) x d_p
  ag::Parameter pos2;

  static EmbeddingTables init(const FeaturizerConfig& config, std::size_t vocab_size, Rng& rng);
};

/// Replaces rows of the word table with vectors from a "token v1 .. v_dw" file.
/// Returns the number of rows overwritten.
std::size_t load_pretrained(const std::filesystem::path& path, const Vocab& vocab, ag::Parameter& word_table);

/// X = [word ; pos1 ; pos2] row per token, shape l x (d_w + 2 d_p).
ag::Var embed(const FeaturizedInstance& inst, ag::Var word, ag::Var pos1, ag::Var pos2);

}  // namespace dsre
