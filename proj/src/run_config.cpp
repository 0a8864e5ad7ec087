#include "lanegraph/run_config.hpp"

#include <iomanip>
#include <set>
#include <sstream>

#include "lanegraph/graph_io.hpp"

namespace lanegraph {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string flag(bool b) { return b ? "1" : "0"; }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename V>
void read_value(const std::map<std::string, std::string>& kv, const std::string& key, V& field) {
  const auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream in(it->second);
  in >> field;
  if (in.fail() || !in.eof()) throw ConfigError("config: bad value '" + it->second + "' for " + key);
}

const std::set<std::string>& boolean_keys() {
  static const std::set<std::string> keys{"gen.augment_flip", "gen.augment_rotate", "gen.augment_scale",
                                          "sampler.greedy", "sampler.grammar_mask"};
  return keys;
}

std::map<std::string, std::string> prefixed(const std::map<std::string, std::string>& kv, const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : kv) {
    if (k.rfind(prefix, 0) == 0) out[k.substr(prefix.size())] = v;
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["vocab.num_bins"] = std::to_string(vocab.num_bins);
  m["vocab.max_vertices"] = std::to_string(vocab.max_vertices);
  m["vocab.vertex_len"] = std::to_string(vocab.vertex_len);
  m["vocab.edge_len"] = std::to_string(vocab.edge_len);
  for (const auto& [k, v] : gen.to_map()) m["gen." + k] = v;
  for (const auto& [k, v] : model.to_map()) m["model." + k] = v;
  m["train.steps"] = std::to_string(train.steps);
  m["train.batch_size"] = std::to_string(train.batch_size);
  m["train.learning_rate"] = num(train.learning_rate);
  m["train.warmup_steps"] = std::to_string(train.warmup_steps);
  m["train.final_lr_fraction"] = num(train.final_lr_fraction);
  m["train.weight_decay"] = num(train.weight_decay);
  m["train.beta1"] = num(train.beta1);
  m["train.beta2"] = num(train.beta2);
  m["train.epsilon"] = num(train.epsilon);
  m["train.grad_clip"] = num(train.grad_clip);
  m["train.terminator_weight"] = num(train.terminator_weight);
  m["train.seed"] = std::to_string(train.seed);
  m["train.checkpoint_every"] = std::to_string(train.checkpoint_every);
  m["sampler.alpha_c"] = num(sampler.alpha_c);
  m["sampler.nucleus_p"] = num(sampler.nucleus_p);
  m["sampler.temperature"] = num(sampler.temperature);
  m["sampler.greedy"] = flag(sampler.greedy);
  m["sampler.seed"] = std::to_string(sampler.seed);
  m["sampler.max_vertex_len"] = std::to_string(sampler.max_vertex_len);
  m["sampler.max_edge_len"] = std::to_string(sampler.max_edge_len);
  m["sampler.grammar_mask"] = flag(sampler.grammar_mask);
  m["eval.threshold"] = num(threshold);
  m["order"] = order;
  return m;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  read_value(kv, "vocab.num_bins", c.vocab.num_bins);
  read_value(kv, "vocab.max_vertices", c.vocab.max_vertices);
  read_value(kv, "vocab.vertex_len", c.vocab.vertex_len);
  read_value(kv, "vocab.edge_len", c.vocab.edge_len);
  try {
    c.gen = GenConfig::from_map(prefixed(kv, "gen."));
    c.model = ModelConfig::from_map(prefixed(kv, "model."));
  } catch (const FormatError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  read_value(kv, "train.steps", c.train.steps);
  read_value(kv, "train.batch_size", c.train.batch_size);
  read_value(kv, "train.learning_rate", c.train.learning_rate);
  read_value(kv, "train.warmup_steps", c.train.warmup_steps);
  read_value(kv, "train.final_lr_fraction", c.train.final_lr_fraction);
  read_value(kv, "train.weight_decay", c.train.weight_decay);
  read_value(kv, "train.beta1", c.train.beta1);
  read_value(kv, "train.beta2", c.train.beta2);
  read_value(kv, "train.epsilon", c.train.epsilon);
  read_value(kv, "train.grad_clip", c.train.grad_clip);
  read_value(kv, "train.terminator_weight", c.train.terminator_weight);
  read_value(kv, "train.seed", c.train.seed);
  read_value(kv, "train.checkpoint_every", c.train.checkpoint_every);
  read_value(kv, "sampler.alpha_c", c.sampler.alpha_c);
  read_value(kv, "sampler.nucleus_p", c.sampler.nucleus_p);
  read_value(kv, "sampler.temperature", c.sampler.temperature);
  read_value(kv, "sampler.greedy", c.sampler.greedy);
  read_value(kv, "sampler.seed", c.sampler.seed);
  read_value(kv, "sampler.max_vertex_len", c.sampler.max_vertex_len);
  read_value(kv, "sampler.max_edge_len", c.sampler.max_edge_len);
  read_value(kv, "sampler.grammar_mask", c.sampler.grammar_mask);
  read_value(kv, "eval.threshold", c.threshold);
  if (const auto it = kv.find("order"); it != kv.end()) c.order = it->second;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto m = to_map();
  if (m.count(key) == 0) throw ConfigError("config: unknown key '" + key + "'");
  std::string v = trim(value);
  if (boolean_keys().count(key) != 0) {
    if (v == "on" || v == "true" || v == "yes") v = "1";
    else if (v == "off" || v == "false" || v == "no") v = "0";
    else if (v != "0" && v != "1") throw ConfigError("config: '" + key + "' expects on/off, got '" + value + "'");
  }
  m[key] = v;
  *this = from_map(m);
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

void RunConfig::set_seed(std::uint64_t seed) {
  gen.seed = seed;
  train.seed = seed;
  sampler.seed = seed;
}

void RunConfig::check() const {
  try {
    vocab.check();
    gen.check();
    model.check();
    sampler.check();
    (void)parse_order_kind(order);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (model.raster_h != gen.raster_h || model.raster_w != gen.raster_w) {
    throw ConfigError("config conflict: model raster " + std::to_string(model.raster_h) + "x" +
                      std::to_string(model.raster_w) + " differs from gen raster " + std::to_string(gen.raster_h) +
                      "x" + std::to_string(gen.raster_w));
  }
  if (gen.max_vertices > vocab.max_vertices) {
    throw ConfigError("config conflict: gen.max_vertices exceeds vocab.max_vertices");
  }
  if (!(threshold > 0.0)) throw ConfigError("config: eval.threshold must be positive");
  if (train.batch_size == 0) throw ConfigError("config: train.batch_size must be positive");
}

SerializationOrder RunConfig::serialization_order() const {
  const OrderKind kind = parse_order_kind(order);
  return kind == OrderKind::Random ? SerializationOrder::random(gen.seed) : SerializationOrder{kind, std::nullopt};
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config: line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key) != 0) throw ConfigError("config: line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  c.apply(parse_key_values(read_text_file(path)));
  return c;
}

}  // namespace lanegraph
