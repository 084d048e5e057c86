#include "dpm/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dpm {

const std::map<std::string, ValueKind>& RunConfig::schema() {
  static const std::map<std::string, ValueKind> keys = {
      {"seed", ValueKind::Unsigned},
      {"seeds", ValueKind::UnsignedList},
      // datasets
      {"classes", ValueKind::Unsigned},
      {"epsilon", ValueKind::Real},
      {"heldout_fraction", ValueKind::Real},
      // preference models
      {"kind", ValueKind::String},
      {"dim", ValueKind::Unsigned},
      {"lr", ValueKind::Real},
      {"inner_steps", ValueKind::Unsigned},
      {"max_epochs", ValueKind::Unsigned},
      {"tol", ValueKind::Real},
      {"minibatch", ValueKind::Unsigned},
      // generator
      {"gen_dim", ValueKind::Unsigned},
      {"gen_lr", ValueKind::Real},
      {"gen_steps", ValueKind::Unsigned},
      {"ngram_order", ValueKind::Unsigned},
      {"max_len", ValueKind::Unsigned},
      {"strategy", ValueKind::String},
      {"width", ValueKind::Unsigned},
      {"nucleus_p", ValueKind::Real},
      // calibration
      {"k", ValueKind::Unsigned},
      {"ks", ValueKind::UnsignedList},
      {"margin", ValueKind::Real},
      {"nll_weight", ValueKind::Real},
      {"length_penalty", ValueKind::Real},
      {"calib_lr", ValueKind::Real},
      {"calib_steps", ValueKind::Unsigned},
      {"diversity_penalty", ValueKind::Real},
      {"eval_k", ValueKind::Unsigned},
      {"baseline_momentum", ValueKind::Real},
      // simulator
      {"items", ValueKind::Unsigned},
      {"annotators", ValueKind::Unsigned},
      {"text_layers", ValueKind::Unsigned},
      {"tokens_per_layer", ValueKind::Unsigned},
      {"context_vocab", ValueKind::Unsigned},
      {"context_len", ValueKind::Unsigned},
      {"planted_scale", ValueKind::Real},
      {"proposals", ValueKind::Unsigned},
  };
  return keys;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

long long parse_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw Error("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& raw) {
  auto it = schema().find(key);
  if (it == schema().end()) throw Error("unknown config key '" + key + "'");
  const std::string value = trim(raw);
  switch (it->second) {
    case ValueKind::Real: parse_real(key, value); break;
    case ValueKind::Integer: parse_integer(key, value); break;
    case ValueKind::Unsigned: parse_unsigned(key, value); break;
    case ValueKind::String:
      if (value.empty()) throw Error("config key '" + key + "': empty value");
      break;
    case ValueKind::RealList:
      for (const auto& p : split_list(value)) parse_real(key, p);
      break;
    case ValueKind::UnsignedList:
      for (const auto& p : split_list(value)) parse_unsigned(key, p);
      break;
  }
  values_[key] = value;
}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      cfg.set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return parse(in);
}

double RunConfig::real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_real(key, it->second);
}

long long RunConfig::integer(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_integer(key, it->second);
}

std::uint64_t RunConfig::unsigned_value(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_unsigned(key, it->second);
}

std::string RunConfig::string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::vector<double> RunConfig::reals(const std::string& key, std::vector<double> fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const auto& p : split_list(it->second)) out.push_back(parse_real(key, p));
  return out;
}

std::vector<std::uint64_t> RunConfig::unsigned_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& p : split_list(it->second)) out.push_back(parse_unsigned(key, p));
  return out;
}

DatasetReadOptions RunConfig::read_options() const {
  DatasetReadOptions o;
  o.class_count = unsigned_value("classes", o.class_count);
  o.epsilon = real("epsilon", o.epsilon);
  return o;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.lr = real("lr", c.lr);
  c.inner_steps = static_cast<int>(unsigned_value("inner_steps", static_cast<std::uint64_t>(c.inner_steps)));
  c.max_epochs = static_cast<int>(unsigned_value("max_epochs", static_cast<std::uint64_t>(c.max_epochs)));
  c.tol = real("tol", c.tol);
  c.minibatch = unsigned_value("minibatch", c.minibatch);
  c.dim = static_cast<std::uint32_t>(unsigned_value("dim", c.dim));
  c.seed = seed();
  return c;
}

GenTrainConfig RunConfig::gen_config() const {
  GenTrainConfig c;
  c.dim = static_cast<std::uint32_t>(unsigned_value("gen_dim", c.dim));
  c.lr = real("gen_lr", c.lr);
  c.steps = static_cast<int>(unsigned_value("gen_steps", static_cast<std::uint64_t>(c.steps)));
  c.ngram_order = static_cast<std::uint32_t>(unsigned_value("ngram_order", c.ngram_order));
  c.max_len = static_cast<std::uint32_t>(unsigned_value("max_len", c.max_len));
  return c;
}

CalibConfig RunConfig::calib_config() const {
  CalibConfig c;
  c.k = unsigned_value("k", c.k);
  c.margin = real("margin", c.margin);
  if (has("nll_weight")) c.nll_weight = real("nll_weight", 0.0);
  c.length_penalty = real("length_penalty", c.length_penalty);
  c.lr = real("calib_lr", c.lr);
  c.steps = static_cast<int>(unsigned_value("calib_steps", static_cast<std::uint64_t>(c.steps)));
  c.seed = seed();
  c.diversity_penalty = real("diversity_penalty", c.diversity_penalty);
  c.eval_k = unsigned_value("eval_k", c.eval_k);
  c.nucleus_p = real("nucleus_p", c.nucleus_p);
  c.baseline_momentum = real("baseline_momentum", c.baseline_momentum);
  return c;
}

SimulationConfig RunConfig::simulation_config() const {
  SimulationConfig c;
  c.n_items = unsigned_value("items", c.n_items);
  c.n_annotators = unsigned_value("annotators", c.n_annotators);
  c.text_layers = unsigned_value("text_layers", c.text_layers);
  c.tokens_per_layer = unsigned_value("tokens_per_layer", c.tokens_per_layer);
  c.context_vocab = unsigned_value("context_vocab", c.context_vocab);
  c.context_len = unsigned_value("context_len", c.context_len);
  c.planted_scale = real("planted_scale", c.planted_scale);
  c.proposals = unsigned_value("proposals", c.proposals);
  c.dim = static_cast<std::uint32_t>(unsigned_value("dim", c.dim));
  c.seed = seed();
  return c;
}

}  // namespace dpm
