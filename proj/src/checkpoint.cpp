#include "dsre/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "dsre/random.hpp"

namespace dsre {

namespace {

constexpr const char* kMagic = "dsre-checkpoint";
constexpr int kVersion = 1;

void require_plain(const std::string& word, const char* what) {
  if (word.empty() || word.find_first_of(" \t\r\n") != std::string::npos) {
    throw CheckpointError(std::string("checkpoint: ") + what + " '" + word + "' is empty or contains whitespace");
  }
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string line() {
    std::string l;
    if (!std::getline(in_, l)) throw CheckpointError("checkpoint: unexpected end of file after line " + std::to_string(no_));
    ++no_;
    return l;
  }

  /// Reads "<tag> <count>" and returns the count.
  std::size_t section(const std::string& tag) {
    std::istringstream ss(line());
    std::string got;
    std::size_t n = 0;
    if (!(ss >> got >> n) || got != tag) fail("expected section '" + tag + "'");
    return n;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError("checkpoint line " + std::to_string(no_) + ": " + msg);
  }

 private:
  std::istringstream in_;
  std::size_t no_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig& mc = ckpt.params.config;
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "model " + std::to_string(mc.featurizer.word_dim) + " " + std::to_string(mc.featurizer.pos_dim) + " " +
         std::to_string(mc.featurizer.max_len) + " " + std::to_string(mc.featurizer.max_distance) + " " +
         std::to_string(mc.encoder.kernel_width) + " " + std::to_string(mc.encoder.kernels) + " " +
         std::to_string(mc.n_relations) + "\n";

  std::vector<std::string> config_lines;
  std::istringstream cs(ckpt.config);
  for (std::string l; std::getline(cs, l);) config_lines.push_back(l);
  out += "config " + std::to_string(config_lines.size()) + "\n";
  for (const auto& l : config_lines) out += l + "\n";

  out += "relations " + std::to_string(ckpt.relations.size()) + "\n";
  for (const auto& r : ckpt.relations.names()) {
    require_plain(r, "relation");
    out += r + "\n";
  }

  const auto& tokens = ckpt.vocab.tokens();
  out += "vocab " + std::to_string(tokens.size() - 2) + "\n";
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    require_plain(tokens[i], "token");
    out += tokens[i] + "\n";
  }

  const auto params = ckpt.params.parameters();
  out += "tensors " + std::to_string(params.size()) + "\n";
  char buf[32];
  for (const ag::Parameter* p : params) {
    out += "tensor " + p->name + " " + std::to_string(p->value.rows()) + " " + std::to_string(p->value.cols()) + "\n";
    for (std::size_t r = 0; r < p->value.rows(); ++r) {
      const auto row = p->value.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        std::snprintf(buf, sizeof buf, c == 0 ? "%.17g" : " %.17g", row[c]);
        out += buf;
      }
      out += "\n";
    }
  }
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  Reader rd(text);
  {
    std::istringstream ss(rd.line());
    std::string magic;
    int version = 0;
    if (!(ss >> magic >> version) || magic != kMagic) rd.fail("not a checkpoint");
    if (version != kVersion) rd.fail("unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  ModelConfig mc;
  {
    std::istringstream ss(rd.line());
    std::string tag;
    if (!(ss >> tag >> mc.featurizer.word_dim >> mc.featurizer.pos_dim >> mc.featurizer.max_len >>
          mc.featurizer.max_distance >> mc.encoder.kernel_width >> mc.encoder.kernels >> mc.n_relations) ||
        tag != "model") {
      rd.fail("malformed model line");
    }
  }
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    rd.fail(e.what());
  }

  for (std::size_t n = rd.section("config"); n > 0; --n) ck.config += rd.line() + "\n";

  std::vector<std::string> names;
  for (std::size_t n = rd.section("relations"); n > 0; --n) names.push_back(rd.line());
  try {
    ck.relations = RelationVocab(names);
  } catch (const std::exception& e) {
    rd.fail(e.what());
  }
  if (ck.relations.size() != mc.n_relations) rd.fail("relation count disagrees with the model line");

  std::vector<std::string> tokens;
  for (std::size_t n = rd.section("vocab"); n > 0; --n) tokens.push_back(rd.line());
  ck.vocab = Vocab(tokens);
  if (ck.vocab.size() != tokens.size() + 2) rd.fail("duplicate vocabulary entries");

  Rng unused(0);
  ck.params = ModelParams::init(mc, ck.vocab.size(), unused);
  auto params = ck.params.parameters();
  if (rd.section("tensors") != params.size()) rd.fail("wrong tensor count");
  for (ag::Parameter* p : params) {
    std::istringstream hs(rd.line());
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(hs >> tag >> name >> rows >> cols) || tag != "tensor") rd.fail("malformed tensor header");
    if (name != p->name) rd.fail("expected tensor " + p->name + ", found " + name);
    if (rows != p->value.rows() || cols != p->value.cols()) {
      rd.fail("tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
              p->value.shape_string());
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const std::string l = rd.line();
      const char* cur = l.data();
      const char* end = l.data() + l.size();
      for (double& v : p->value.row(r)) {
        while (cur < end && *cur == ' ') ++cur;
        const auto [ptr, ec] = std::from_chars(cur, end, v);
        if (ec != std::errc()) rd.fail("bad value in tensor " + name);
        cur = ptr;
      }
      while (cur < end && *cur == ' ') ++cur;
      if (cur != end) rd.fail("too many values in tensor " + name);
    }
  }
  if (rd.line() != "end") rd.fail("missing end marker");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << text;
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace dsre
