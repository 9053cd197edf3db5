#include "dsre/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dsre/random.hpp"

namespace dsre {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.set = [access](RunConfig& c, std::string_view key, std::string_view value) {
    T& slot = access(c);
    if constexpr (std::is_same_v<T, Variant>) {
      try {
        slot = Variant::parse(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("config key '" + std::string(key) + "': " + e.what());
      }
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      slot.clear();
      std::size_t pos = 0;
      while (pos <= value.size()) {
        const std::size_t next = std::min(value.find(',', pos), value.size());
        const std::string_view item = trim(value.substr(pos, next - pos));
        if (!item.empty()) slot.push_back(parse_number<double>(key, item));
        pos = next + 1;
      }
    } else {
      slot = parse_number<T>(key, value);
    }
  };
  f.get = [access](const RunConfig& c) {
    const T& slot = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, Variant>) {
      return slot.name();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::string out;
      for (std::size_t i = 0; i < slot.size(); ++i) out += (i ? "," : "") + format_double(slot[i]);
      return out;
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(slot);
    } else {
      return std::to_string(slot);
    }
  };
  return f;
}

#define DSRE_FIELD(key, expr) {key, field([](RunConfig& c) -> auto& { return expr; })}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      DSRE_FIELD("seed", c.seed),
      DSRE_FIELD("threads", c.threads),
      DSRE_FIELD("synth.relations", c.synth.n_relations),
      DSRE_FIELD("synth.train_pairs", c.synth.n_train_pairs),
      DSRE_FIELD("synth.test_pairs", c.synth.n_test_pairs),
      DSRE_FIELD("synth.vocab_size", c.synth.vocab_size),
      DSRE_FIELD("synth.entities", c.synth.n_entities),
      DSRE_FIELD("synth.na_pair_fraction", c.synth.na_pair_fraction),
      DSRE_FIELD("synth.singleton_fraction", c.synth.singleton_fraction),
      DSRE_FIELD("synth.max_bag_size", c.synth.max_bag_size),
      DSRE_FIELD("synth.bag_size_decay", c.synth.bag_size_decay),
      DSRE_FIELD("synth.noise_rate", c.synth.noise_rate),
      DSRE_FIELD("synth.noise_to_na", c.synth.noise_to_na),
      DSRE_FIELD("synth.triggers_per_relation", c.synth.triggers_per_relation),
      DSRE_FIELD("synth.trigger_zipf", c.synth.trigger_zipf),
      DSRE_FIELD("synth.distractor_rate", c.synth.distractor_rate),
      DSRE_FIELD("synth.max_context", c.synth.max_context),
      DSRE_FIELD("model.word_dim", c.train.model.featurizer.word_dim),
      DSRE_FIELD("model.pos_dim", c.train.model.featurizer.pos_dim),
      DSRE_FIELD("model.max_len", c.train.model.featurizer.max_len),
      DSRE_FIELD("model.max_distance", c.train.model.featurizer.max_distance),
      DSRE_FIELD("model.kernel_width", c.train.model.encoder.kernel_width),
      DSRE_FIELD("model.kernels", c.train.model.encoder.kernels),
      DSRE_FIELD("train.epochs", c.train.epochs),
      DSRE_FIELD("train.batch_size", c.train.batch_size),
      DSRE_FIELD("train.learning_rate", c.train.learning_rate),
      DSRE_FIELD("train.decay_at", c.train.decay_at),
      DSRE_FIELD("train.decay_factor", c.train.decay_factor),
      DSRE_FIELD("train.min_count", c.train.min_count),
      DSRE_FIELD("train.variant", c.train.variant),
      DSRE_FIELD("ivat.threshold", c.train.ivat.threshold),
      DSRE_FIELD("ivat.epsilon", c.train.ivat.epsilon),
      DSRE_FIELD("ivat.xi", c.train.ivat.xi),
      DSRE_FIELD("ivat.power_iterations", c.train.ivat.power_iterations),
      DSRE_FIELD("ivat.beta", c.train.ivat.beta),
      DSRE_FIELD("bat.epsilon", c.train.bat.epsilon),
      DSRE_FIELD("bat.beta", c.train.bat.beta),
      DSRE_FIELD("bat.power_iterations", c.train.bat.power_iterations),
      DSRE_FIELD("bat.xi", c.train.bat.xi),
  };
  return table;
}

#undef DSRE_FIELD

const Field& lookup(std::string_view key) {
  const auto& table = fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

}  // namespace

SynthConfig RunConfig::synth_for_run() const {
  SynthConfig s = synth;
  s.seed = split_seed(seed, "data");
  return s;
}

TrainConfig RunConfig::train_for_run() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

void set_option(RunConfig& config, std::string_view key, std::string_view value) {
  lookup(key).set(config, key, trim(value));
}

std::string get_option(const RunConfig& config, std::string_view key) { return lookup(key).get(config); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    try {
      set_option(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(config) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_config(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dsre
