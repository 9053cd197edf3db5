#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dsre/corpus.hpp"
#include "dsre/trainer.hpp"

namespace dsre {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command needs besides paths. `seed` is the single root seed;
/// data generation and training derive their streams from it.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  SynthConfig synth;
  TrainConfig train;

  /// Generator settings with the data seed split from the root.
  SynthConfig synth_for_run() const;
  /// Training settings seeded from the root.
  TrainConfig train_for_run() const;
};

/// Flat "key = value" lines; '#' starts a comment. Unknown keys are rejected.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

void set_option(RunConfig& config, std::string_view key, std::string_view value);
std::string get_option(const RunConfig& config, std::string_view key);
std::vector<std::string> config_keys();

/// Every key as "key=value", sorted, newline terminated.
std::string canonical_config(const RunConfig& config);
/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace dsre
