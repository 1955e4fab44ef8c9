#include "config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace dafe {

namespace {

// Registry of every tunable: key -> toy-scale default. The "paper" preset in
// configs/paper.conf overrides geometry and preprocessing to the full-size
// values.
const std::map<std::string, std::string>& key_registry() {
  static const std::map<std::string, std::string> registry = {
      {"seed", "12345"},
      {"data.gallery_view", "1"},

      {"synth.identities", "40"},
      {"synth.views", "2"},
      {"synth.images_per_view", "4"},
      {"synth.image_size", "48"},
      {"synth.curvature", "1.0"},
      {"synth.noise", "0.05"},

      {"preproc.image_size", "48"},
      {"preproc.whiten", "true"},
      {"preproc.use_lbp", "false"},
      {"preproc.use_gabor", "false"},
      {"preproc.per_representation", "false"},
      {"gabor.wavelengths", "4,8"},
      {"gabor.orientations", "4"},
      {"gabor.kernel_size", "11"},
      {"gabor.sigma_ratio", "0.56"},
      {"gabor.aspect", "0.5"},
      {"gabor.psi", "0.0"},
      {"pca.enabled", "false"},
      {"pca.components", "500"},

      {"crbm.filters", "12,16,20"},
      {"crbm.filter_sizes", "8,6,4"},
      {"crbm.pool_sizes", "2,2,2"},
      {"crbm.epochs", "10"},
      {"crbm.batch_size", "10"},
      {"crbm.learning_rate", "0.1"},
      {"crbm.momentum", "0.9"},
      {"crbm.weight_decay", "0.002"},
      {"crbm.sparsity_target", "0.01"},
      {"crbm.sparsity_weight", "1.0"},
      {"crbm.init_stddev", "0.1"},

      {"features.mode", "third_layer"},

      {"train.iterations", "2000"},
      {"train.batch_p", "8"},
      {"train.batch_k", "4"},
      {"train.loss", "quadruplet"},
      {"train.margin_alpha1", "1.0"},
      {"train.margin_alpha2", "0.5"},
      {"train.margin_alpha", "0.5"},
      {"train.learning_rate", "0.2"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.grad_clip", "5.0"},
      {"train.finetune_layers", "1"},
      {"train.positive_mode", "hard"},
      {"train.mine_per_identity", "false"},
      {"train.optimizer", "sgd"},
      {"train.vr_q", "1"},
      {"train.vr_k", "4"},
      {"train.vr_batches", "16"},
      {"train.head_init_stddev", "0.1"},
      {"train.checkpoint_every", "0"},
      {"train.augment", "false"},
      {"train.augment_max_crop", "5"},

      {"eval.trials", "10"},
      {"eval.mq", "false"},
      {"eval.scorer", "head"},
  };
  return registry;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool is_one_of(const std::string& v, std::initializer_list<const char*> opts) {
  return std::any_of(opts.begin(), opts.end(),
                     [&](const char* o) { return v == o; });
}

}  // namespace

Config Config::defaults() {
  Config c;
  c.values_ = key_registry();
  return c;
}

Config Config::parse(const std::string& text) {
  Config c = defaults();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      raise(ErrorCode::config,
            "config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io, "cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void Config::set(const std::string& key, const std::string& value) {
  if (key_registry().find(key) == key_registry().end())
    raise(ErrorCode::config, "unknown config key: " + key);
  values_[key] = value;
}

bool Config::has(const std::string& key) const {
  return values_.find(key) != values_.end();
}

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) raise(ErrorCode::config, "missing config key: " + key);
  return it->second;
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    raise(ErrorCode::config, "config key " + key + ": expected integer, got '" + v + "'");
  }
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    raise(ErrorCode::config, "config key " + key + ": expected number, got '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  raise(ErrorCode::config, "config key " + key + ": expected boolean, got '" + v + "'");
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (double v : get_double_list(key)) {
    if (v < 1 || v != static_cast<std::size_t>(v))
      raise(ErrorCode::config, "config key " + key + ": expected positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  const std::string v = get_string(key);
  std::vector<double> out;
  std::istringstream in(v);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      raise(ErrorCode::config, "config key " + key + ": bad list element '" + tok + "'");
    }
  }
  if (out.empty()) raise(ErrorCode::config, "config key " + key + ": empty list");
  return out;
}

std::uint64_t Config::seed() const {
  if (const char* env = std::getenv("DAFE_SEED")) {
    try {
      return static_cast<std::uint64_t>(std::stoull(env));
    } catch (const std::exception&) {
      raise(ErrorCode::config, "DAFE_SEED is not an integer");
    }
  }
  return static_cast<std::uint64_t>(get_int("seed"));
}

void Config::validate() const {
  for (const auto& [key, value] : values_)
    if (key_registry().find(key) == key_registry().end())
      raise(ErrorCode::config, "unknown config key: " + key);

  const double a1 = get_double("train.margin_alpha1");
  const double a2 = get_double("train.margin_alpha2");
  if (!(a1 > a2 && a2 > 0.0))
    raise(ErrorCode::config, "margins must satisfy alpha1 > alpha2 > 0");
  if (get_double("train.margin_alpha") <= 0.0)
    raise(ErrorCode::config, "train.margin_alpha must be positive");

  const auto filters = get_size_list("crbm.filters");
  const auto sizes = get_size_list("crbm.filter_sizes");
  const auto pools = get_size_list("crbm.pool_sizes");
  if (filters.size() != sizes.size() || filters.size() != pools.size())
    raise(ErrorCode::config, "crbm.filters / filter_sizes / pool_sizes lengths differ");
  if (filters.empty()) raise(ErrorCode::config, "need at least one crbm layer");

  if (!is_one_of(get_string("features.mode"), {"third_layer", "concat_all"}))
    raise(ErrorCode::config, "features.mode must be third_layer or concat_all");
  if (!is_one_of(get_string("train.loss"),
                 {"quadruplet", "triplet", "quadruplet_dist", "triplet_dist", "nca"}))
    raise(ErrorCode::config, "train.loss must be one of quadruplet, triplet, "
                             "quadruplet_dist, triplet_dist, nca");
  if (!is_one_of(get_string("train.positive_mode"), {"hard", "random"}))
    raise(ErrorCode::config, "train.positive_mode must be hard or random");
  if (!is_one_of(get_string("train.optimizer"),
                 {"sgd", "saga", "qsaga", "svrg", "nsaga"}))
    raise(ErrorCode::config, "train.optimizer must be sgd, saga, qsaga, svrg, or nsaga");
  if (!is_one_of(get_string("eval.scorer"), {"head", "distance"}))
    raise(ErrorCode::config, "eval.scorer must be head or distance");

  if (get_int("train.batch_p") < 2 || get_int("train.batch_k") < 2)
    raise(ErrorCode::config, "train.batch_p and train.batch_k must be at least 2");
  if (get_int("synth.identities") < 2 || get_int("synth.views") < 2)
    raise(ErrorCode::config, "synthetic data needs at least 2 identities and 2 views");
  const std::int64_t ft = get_int("train.finetune_layers");
  if (ft < 0 || ft > static_cast<std::int64_t>(filters.size()))
    raise(ErrorCode::config, "train.finetune_layers out of range");
}

std::string Config::snapshot() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  return out.str();
}

}  // namespace dafe
