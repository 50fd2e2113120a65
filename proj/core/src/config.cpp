#include "fits/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace fits::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("key " + key + ": expected boolean, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected unsigned integer, got '" + v + "'");
  }
}

}  // namespace

KeyValues parse_text(const std::string& text) {
  KeyValues kv;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " has no '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key on line " + std::to_string(lineno));
    kv[key] = val;
  }
  return kv;
}

KeyValues parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str());
}

void apply_overrides(KeyValues& kv,
                     const std::vector<std::pair<std::string, std::string>>& ov) {
  for (const auto& [k, v] : ov) kv[k] = v;
}

std::string render(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

TrainConfig parse_train_config(const KeyValues& kv) {
  static const std::set<std::string> known = {
      "stage",        "epochs",       "post.epochs",  "batch_size",   "k",
      "k_irr",        "k_reg",        "loss.mlm",     "loss.ka",
      "loss.ksd",     "loss.kbr",     "optim.lr",     "optim.beta1",
      "optim.beta2",  "optim.eps",    "seed",         "data.kg",
      "data.train",   "data.dev",     "data.test",    "checkpoint.in",
      "checkpoint.out", "eval.inject",
      "model.d_l",    "model.d_g",    "model.n_layers", "model.m_layers",
      "model.text_heads", "model.gat_heads", "model.max_seq", "model.ff_width",
      "retrieve.hops"};
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown config key: " + k);

  TrainConfig c;
  auto get = [&kv](const std::string& k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("stage")) {
    if (*v == "post")
      c.stage = Stage::kPost;
    else if (*v == "finetune")
      c.stage = Stage::kFinetune;
    else
      throw ConfigError("stage must be 'post' or 'finetune', got '" + *v + "'");
  }
  if (auto v = get("epochs")) c.epochs = to_int("epochs", *v);
  if (auto v = get("post.epochs")) c.post_epochs = to_int("post.epochs", *v);
  if (auto v = get("batch_size")) c.batch_size = to_int("batch_size", *v);
  if (auto v = get("k")) c.k = to_int("k", *v);
  if (auto v = get("k_irr")) c.k_irr = to_int("k_irr", *v);
  if (auto v = get("k_reg")) c.k_reg = to_int("k_reg", *v);
  if (auto v = get("loss.mlm")) c.loss_mlm = to_bool("loss.mlm", *v);
  if (auto v = get("loss.ka")) c.loss_ka = to_bool("loss.ka", *v);
  if (auto v = get("loss.ksd")) c.loss_ksd = to_bool("loss.ksd", *v);
  if (auto v = get("loss.kbr")) c.loss_kbr = to_bool("loss.kbr", *v);
  if (auto v = get("optim.lr")) c.optim.lr = to_double("optim.lr", *v);
  if (auto v = get("optim.beta1")) c.optim.beta1 = to_double("optim.beta1", *v);
  if (auto v = get("optim.beta2")) c.optim.beta2 = to_double("optim.beta2", *v);
  if (auto v = get("optim.eps")) c.optim.eps = to_double("optim.eps", *v);
  if (auto v = get("seed")) c.seed = to_u64("seed", *v);
  if (auto v = get("data.kg")) c.data_kg = *v;
  if (auto v = get("data.train")) c.data_train = *v;
  if (auto v = get("data.dev")) c.data_dev = *v;
  if (auto v = get("data.test")) c.data_test = *v;
  if (auto v = get("checkpoint.in")) c.checkpoint_in = *v;
  if (auto v = get("checkpoint.out")) c.checkpoint_out = *v;
  if (auto v = get("eval.inject")) c.eval_inject = to_bool("eval.inject", *v);
  if (auto v = get("model.d_l")) c.d_l = to_int("model.d_l", *v);
  if (auto v = get("model.d_g")) c.d_g = to_int("model.d_g", *v);
  if (auto v = get("model.n_layers")) c.n_unimodal = to_int("model.n_layers", *v);
  if (auto v = get("model.m_layers")) c.m_fusion = to_int("model.m_layers", *v);
  if (auto v = get("model.text_heads")) c.text_heads = to_int("model.text_heads", *v);
  if (auto v = get("model.gat_heads")) c.gat_heads = to_int("model.gat_heads", *v);
  if (auto v = get("model.max_seq")) c.max_seq = to_int("model.max_seq", *v);
  if (auto v = get("model.ff_width")) c.ff_width = to_int("model.ff_width", *v);
  if (auto v = get("retrieve.hops")) c.hops = to_int("retrieve.hops", *v);

  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.k_irr < 0 || c.k_reg < 0) throw ConfigError("k_irr/k_reg must be >= 0");
  if (c.stage == Stage::kPost && c.loss_ka && c.k < 1)
    throw ConfigError("k must be >= 1 when KA is enabled");
  return c;
}

GenFileConfig parse_gen_config(const KeyValues& kv) {
  static const std::set<std::string> known = {
      "n_entities", "n_relations",   "n_examples",       "n_candidates",
      "chain_hops", "seed",          "retrieve.hops",    "retrieve.max_nodes"};
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown config key: " + k);
  GenFileConfig c;
  auto get = [&kv](const std::string& k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("n_entities")) c.gen.n_entities = to_int("n_entities", *v);
  if (auto v = get("n_relations")) c.gen.n_relations = to_int("n_relations", *v);
  if (auto v = get("n_examples")) c.gen.n_examples = to_int("n_examples", *v);
  if (auto v = get("n_candidates")) c.gen.n_candidates = to_int("n_candidates", *v);
  if (auto v = get("chain_hops")) c.gen.chain_hops = to_int("chain_hops", *v);
  if (auto v = get("seed")) c.gen.seed = to_u64("seed", *v);
  if (auto v = get("retrieve.hops"))
    c.gen.retrieval.hops = to_int("retrieve.hops", *v);
  if (auto v = get("retrieve.max_nodes"))
    c.gen.retrieval.max_nodes = to_int("retrieve.max_nodes", *v);
  return c;
}

}  // namespace fits::config
