#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "dsre/corpus.hpp"
#include "dsre/featurizer.hpp"
#include "dsre/model.hpp"

namespace dsre {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trained model with what is needed to score new text.
struct Checkpoint {
  std::string config;  // canonical config text of the producing run
  RelationVocab relations;
  Vocab vocab;
  ModelParams params;
};

/// Portable text: header, config, relation and word lists, then every tensor
/// with its shape and values printed with 17 significant digits.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsre
