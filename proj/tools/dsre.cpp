#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsre/commands.hpp"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  cmd->add_option("--config,-c", c.config_path, "key=value config file")->required(config_required)->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "root seed override");
  cmd->add_option("--set", c.overrides, "config override key=value (repeatable)");
}

dsre::RunConfig resolve(const Common& c) {
  dsre::RunConfig cfg = c.config_path.empty() ? dsre::RunConfig{} : dsre::load_config(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dsre::ConfigError("--set expects key=value, got '" + kv + "'");
    dsre::set_option(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  dsre::set_log_level(dsre::log_level_from_env());

  CLI::App app{"Distantly supervised relation extraction with instance- and bag-level adversarial training"};
  app.require_subcommand(1);

  Common gen_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, gen_c, true);
  gen->add_option("--out,-o", gen_out, "output directory")->required();

  Common train_c;
  std::string train_data, train_out;
  auto* tr = app.add_subcommand("train", "train one model");
  add_common(tr, train_c, true);
  tr->add_option("--data,-d", train_data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out,-o", train_out, "output directory")->required();

  std::string eval_ckpt, eval_data, eval_out;
  auto* ev = app.add_subcommand("eval", "held-out evaluation of a checkpoint");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data,-d", eval_data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out,-o", eval_out, "output directory")->required();

  Common abl_c;
  std::size_t abl_seeds = 3;
  std::vector<std::string> abl_variants{"baseline", "bat", "ivat", "ivat+bat"};
  std::string abl_data, abl_out = "ablate_out";
  auto* abl = app.add_subcommand("ablate", "variant x seed grid");
  add_common(abl, abl_c, true);
  abl->add_option("--seeds", abl_seeds, "number of seeds")->check(CLI::PositiveNumber);
  abl->add_option("--variants", abl_variants, "variants to compare")->delimiter(',');
  abl->add_option("--data,-d", abl_data, "corpus directory (default: generate from config)")
      ->check(CLI::ExistingDirectory);
  abl->add_option("--out,-o", abl_out, "output directory");
  abl->add_option("--threads", abl_c.threads, "worker threads");

  Common fil_c;
  std::vector<double> fil_thresholds{0.1, 0.2};
  std::string fil_data, fil_out = "filter_out";
  auto* fil = app.add_subcommand("filter-exp", "low-attention filtering experiment");
  add_common(fil, fil_c, true);
  fil->add_option("--thresholds", fil_thresholds, "attention thresholds")->delimiter(',');
  fil->add_option("--data,-d", fil_data, "corpus directory (default: generate from config)")
      ->check(CLI::ExistingDirectory);
  fil->add_option("--out,-o", fil_out, "output directory");

  std::string hist_ckpt, hist_data, hist_out;
  auto* hist = app.add_subcommand("histogram", "attention score histogram over the training bags");
  hist->add_option("--ckpt", hist_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  hist->add_option("--data,-d", hist_data, "corpus directory")->required()->check(CLI::ExistingDirectory);
  hist->add_option("--out,-o", hist_out, "CSV file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      dsre::cmd_gen_data(resolve(gen_c), gen_out);
    } else if (tr->parsed()) {
      dsre::cmd_train(resolve(train_c), train_data, train_out);
    } else if (ev->parsed()) {
      dsre::cmd_eval(eval_ckpt, eval_data, eval_out);
    } else if (abl->parsed()) {
      dsre::cmd_ablate(resolve(abl_c), abl_seeds, abl_variants, abl_data, abl_out);
    } else if (fil->parsed()) {
      dsre::cmd_filter_exp(resolve(fil_c), fil_thresholds, fil_data, fil_out);
    } else if (hist->parsed()) {
      dsre::cmd_histogram(hist_ckpt, hist_data, hist_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
