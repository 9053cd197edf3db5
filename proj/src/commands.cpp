#include "dsre/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "dsre/checkpoint.hpp"
#include "json.hpp"

namespace dsre {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

LogLevel g_level = LogLevel::Info;

constexpr const char* kVersion = "1.0.0";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError("cannot write " + path.string());
  out << text;
  if (!out) throw CommandError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CommandError("cannot create directory " + dir.string() + ": " + ec.message());
}

ordered_json config_json(const RunConfig& config) {
  ordered_json j = ordered_json::object();
  for (const auto& k : config_keys()) j[k] = get_option(config, k);
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config,
                    const std::vector<std::string>& outputs) {
  ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["compiler"] = __VERSION__;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  j["outputs"] = outputs;
  j["config"] = config_json(config);
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct ResolvedData {
  Dataset data;
  std::string source;
};

ResolvedData resolve_data(const RunConfig& config, const fs::path& data) {
  if (!data.empty()) return {load_dataset(data), data.string()};
  SynthCorpus c = generate_synth(config.synth_for_run());
  return {{std::move(c.relations), std::move(c.train), std::move(c.test)}, "synthetic"};
}

TrainConfig train_config_for(const RunConfig& config, const RelationVocab& relations) {
  TrainConfig t = config.train_for_run();
  t.model.n_relations = relations.size();
  return t;
}

}  // namespace

LogLevel log_level_from_env() {
  const char* v = std::getenv("DSRE_LOG");
  if (v == nullptr) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void set_log_level(LogLevel level) { g_level = level; }

void log_info(const std::string& msg) {
  if (g_level != LogLevel::Quiet) std::cerr << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (g_level == LogLevel::Debug) std::cerr << msg << "\n";
}

Dataset load_dataset(const fs::path& dir) {
  const DataFiles files{dir};
  Dataset d;
  d.relations = RelationVocab::load(files.relations());
  d.train = load_corpus(files.train(), Split::Train, d.relations);
  d.test = load_corpus(files.test(), Split::Test, d.relations);
  return d;
}

void cmd_gen_data(const RunConfig& config, const fs::path& out) {
  const SynthCorpus c = generate_synth(config.synth_for_run());
  ensure_dir(out);
  const DataFiles files{out};
  write_corpus(files.train(), c.train, c.relations);
  write_corpus(files.test(), c.test, c.relations);
  c.relations.save(files.relations());

  auto count_noisy = [](const std::vector<Bag>& bags, const std::vector<std::vector<int>>& truth) {
    std::size_t n = 0;
    for (std::size_t b = 0; b < bags.size(); ++b) {
      for (std::size_t i = 0; i < bags[b].instances.size(); ++i) {
        if (truth[b][i] != bags[b].instances[i].relation) ++n;
      }
    }
    return n;
  };
  ordered_json d;
  d["train_bags"] = c.train.size();
  d["train_instances"] = instance_count(c.train);
  d["train_noisy_instances"] = count_noisy(c.train, c.train_truth);
  d["train_noisy_fraction"] = noisy_fraction(c.train, c.train_truth);
  d["test_bags"] = c.test.size();
  d["test_instances"] = instance_count(c.test);
  d["test_noisy_instances"] = count_noisy(c.test, c.test_truth);
  d["train_truth"] = c.train_truth;
  d["test_truth"] = c.test_truth;
  write_text(files.diagnostics(), d.dump() + "\n");
  write_manifest(out, "gen-data", config, {"train.jsonl", "test.jsonl", "relations.txt", "diagnostics.json"});
  log_info("gen-data: " + std::to_string(instance_count(c.train)) + " train instances, " +
           std::to_string(instance_count(c.test)) + " test instances -> " + out.string());
}

void cmd_train(const RunConfig& config, const fs::path& data, const fs::path& out) {
  const Dataset d = load_dataset(data);
  const TrainConfig tc = train_config_for(config, d.relations);
  log_info("train: variant " + tc.variant.name() + ", " + std::to_string(d.train.size()) + " bags, " +
           std::to_string(tc.epochs) + " epochs");
  const TrainResult r = train(d.train, tc);
  for (const EpochLog& e : r.log.epochs) log_debug(epoch_json(e));

  ensure_dir(out);
  save_checkpoint(out / "model.ckpt", {canonical_config(config), d.relations, r.vocab, r.params});
  write_log_jsonl(out / "train_log.jsonl", r.log);
  const Evaluation ev = evaluate(r.params, r.vocab, d.test);
  write_summary_json(out / "metrics.json", ev.summary);
  write_curve_csv(out / "pr_curve.csv", ev.curve);
  write_manifest(out, "train", config, {"model.ckpt", "train_log.jsonl", "metrics.json", "pr_curve.csv"});
  log_info("train: AUC " + fmt(ev.summary.auc, "%.4f") + " -> " + out.string());
  if (r.diverged) throw CommandError("training diverged (" + r.divergence + "); kept last good parameters");
}

void cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const RunConfig config = parse_config(ck.config);
  const RelationVocab relations = RelationVocab::load(DataFiles{data}.relations());
  if (relations.names() != ck.relations.names()) throw CommandError("eval: relation set differs from the checkpoint");
  const std::vector<Bag> test = load_corpus(DataFiles{data}.test(), Split::Test, relations);
  const Evaluation ev = evaluate(ck.params, ck.vocab, test);
  ensure_dir(out);
  write_summary_json(out / "metrics.json", ev.summary);
  write_curve_csv(out / "pr_curve.csv", ev.curve);
  write_manifest(out, "eval", config, {"metrics.json", "pr_curve.csv"});
  log_info("eval: AUC " + fmt(ev.summary.auc, "%.4f") + " P@mean " + fmt(ev.summary.p_mean, "%.4f"));
}

void cmd_ablate(const RunConfig& config, std::size_t seeds, const std::vector<std::string>& variant_names,
                const fs::path& data, const fs::path& out) {
  std::vector<Variant> variants;
  for (const auto& n : variant_names) variants.push_back(Variant::parse(n));
  const ResolvedData rd = resolve_data(config, data);
  const TrainConfig tc = train_config_for(config, rd.data.relations);
  log_info("ablate: " + std::to_string(variants.size()) + " variants x " + std::to_string(seeds) + " seeds on " +
           rd.source + " data");
  const std::vector<AblationCell> cells =
      run_ablation(rd.data.train, rd.data.test, tc, variants, seeds, config.threads);

  ensure_dir(out);
  std::string csv = "variant,seed,auc,p@100,p@200,p@300,p@mean,diverged\n";
  for (const AblationCell& c : cells) {
    csv += c.variant + "," + std::to_string(c.seed) + "," + fmt(c.metrics.auc) + "," + fmt(c.metrics.p100) + "," +
           fmt(c.metrics.p200) + "," + fmt(c.metrics.p300) + "," + fmt(c.metrics.p_mean) + "," +
           (c.diverged ? "1" : "0") + "\n";
  }
  write_text(out / "ablation_cells.csv", csv);

  std::string table = "variant,mean_auc,std_auc,report\n";
  for (const AblationRow& r : ablation_table(cells)) {
    table += r.variant + "," + fmt(r.mean_auc) + "," + fmt(r.std_auc) + "," + fmt(100.0 * r.mean_auc, "%.2f") +
             "\xC2\xB1" + fmt(100.0 * r.std_auc, "%.2f") + "\n";
  }
  write_text(out / "ablation.csv", table);
  write_manifest(out, "ablate", config, {"ablation_cells.csv", "ablation.csv"});
  log_info(table);
}

void cmd_filter_exp(const RunConfig& config, const std::vector<double>& thresholds, const fs::path& data,
                    const fs::path& out) {
  const ResolvedData rd = resolve_data(config, data);
  const TrainConfig tc = train_config_for(config, rd.data.relations);
  const std::vector<Variant> methods{Variant{}, Variant::parse("ivat+bat")};
  const std::vector<FilterRow> rows = run_filter_experiment(rd.data.train, rd.data.test, thresholds, tc, methods);

  ensure_dir(out);
  std::string csv = "dataset,threshold,sentences,removed_fraction,method,auc,relative_delta\n";
  for (const FilterRow& r : rows) {
    csv += std::string(r.filtered ? "filtered" : "original") + "," + (r.filtered ? fmt(r.threshold, "%g") : "") +
           "," + std::to_string(r.sentences) + "," + fmt(r.removed_fraction) + "," + r.method + "," + fmt(r.auc) +
           "," + fmt(r.relative_delta) + "\n";
  }
  write_text(out / "filter.csv", csv);
  write_manifest(out, "filter-exp", config, {"filter.csv"});
  log_info(csv);
}

void cmd_histogram(const fs::path& ckpt, const fs::path& data, const fs::path& out_csv) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const RunConfig config = parse_config(ck.config);
  const std::vector<Bag> train_bags = load_corpus(DataFiles{data}.train(), Split::Train, ck.relations);
  const std::vector<FeaturizedBag> bags = featurize_bags(train_bags, ck.params.config.featurizer, ck.vocab);
  const AttentionHistogram h = attention_histogram(ck.params, bags);

  const fs::path dir = out_csv.has_parent_path() ? out_csv.parent_path() : fs::path(".");
  ensure_dir(dir);
  std::string csv = "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < h.bins.size(); ++i) {
    csv += fmt(0.1 * static_cast<double>(i), "%.1f") + "," + fmt(0.1 * static_cast<double>(i + 1), "%.1f") + "," +
           std::to_string(h.bins[i]) + "\n";
  }
  csv += "1.0,1.0," + std::to_string(h.singleton) + "\n";
  write_text(out_csv, csv);
  write_manifest(dir, "histogram", config, {out_csv.filename().string()});
}

}  // namespace dsre
