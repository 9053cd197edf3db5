#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dsre/config.hpp"

namespace dsre {

/// Raised when a command finishes but could not produce a valid result.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { Quiet, Info, Debug };
/// Reads DSRE_LOG (quiet, info, debug). Defaults to info.
LogLevel log_level_from_env();
void set_log_level(LogLevel level);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

/// Corpus files inside a data directory.
struct DataFiles {
  std::filesystem::path dir;
  std::filesystem::path train() const { return dir / "train.jsonl"; }
  std::filesystem::path test() const { return dir / "test.jsonl"; }
  std::filesystem::path relations() const { return dir / "relations.txt"; }
  std::filesystem::path diagnostics() const { return dir / "diagnostics.json"; }
};

struct Dataset {
  RelationVocab relations;
  std::vector<Bag> train;
  std::vector<Bag> test;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Writes train/test JSON lines, the relation list, noise diagnostics and a manifest.
void cmd_gen_data(const RunConfig& config, const std::filesystem::path& out);

/// Trains on DIR/train.jsonl; writes model.ckpt, train_log.jsonl and held-out
/// metrics on DIR/test.jsonl. Throws CommandError after writing if training diverged.
void cmd_train(const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& out);

/// metrics.json and pr_curve.csv for a checkpoint on DIR/test.jsonl.
void cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& data, const std::filesystem::path& out);

/// Variant x seed grid; the corpus is generated from the config unless `data` is given.
void cmd_ablate(const RunConfig& config, std::size_t seeds, const std::vector<std::string>& variants,
                const std::filesystem::path& data, const std::filesystem::path& out);

/// Low-attention filtering experiment for baseline and ivat+bat.
void cmd_filter_exp(const RunConfig& config, const std::vector<double>& thresholds, const std::filesystem::path& data,
                    const std::filesystem::path& out);

/// Gold-query attention histogram over DIR/train.jsonl as CSV.
void cmd_histogram(const std::filesystem::path& ckpt, const std::filesystem::path& data,
                   const std::filesystem::path& out_csv);

}  // namespace dsre
