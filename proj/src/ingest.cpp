#include "dpm/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "dpm/dataset_io.hpp"

namespace dpm {

using nlohmann::json;

int map_mi_code(std::string_view code) {
  for (std::size_t i = 0; i < kMiCodes.size(); ++i)
    if (kMiCodes[i] == code) return i < 11 ? 0 : 1;
  throw Error("unknown MI code '" + std::string(code) + "'");
}

AnnotatedItem mi_to_item(const MiCodeRecord& record, std::string id) {
  if (record.codes.empty()) throw Error("MI record '" + id + "' has no codes");
  std::vector<int> ann;
  ann.reserve(record.codes.size());
  for (const auto& c : record.codes) ann.push_back(map_mi_code(c));
  AnnotatedItem item;
  item.id = std::move(id);
  item.context = tokenize(record.context);
  item.text = tokenize(record.text);
  item.prior = empirical_prior(ann, 2, 0.0);
  item.raw_annotations = std::move(ann);
  return item;
}

std::pair<double, double> consensus_bracket(int scale) {
  switch (scale) {
    case 1: return {0.0, 0.01};
    case 2: return {0.05, 0.25};
    case 3: return {0.45, 0.55};
    case 4: return {0.75, 0.90};
    case 5: return {0.99, 1.0};
    default: throw Error("invalid consensus scale " + std::to_string(scale) + " (expected 1..5)");
  }
}

AnnotatedItem consensus_to_item(const ConsensusRecord& record, std::string id, RngSeed seed) {
  const auto [lo, hi] = consensus_bracket(record.scale);
  Rng rng(seed);
  const double beta = std::min(hi, rng.uniform(lo, hi));
  AnnotatedItem item;
  item.id = std::move(id);
  item.context = tokenize(record.context);
  item.text = tokenize(record.text);
  item.prior = PrefDist({beta, 1.0 - beta});
  return item;
}

namespace {

template <typename Parse>
auto read_jsonl(std::istream& in, Parse parse) {
  std::vector<decltype(parse(json{}, std::size_t{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error("line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw Error("line " + std::to_string(lineno) + ": expected a JSON object");
    out.push_back(parse(obj, lineno));
  }
  return out;
}

std::string string_field(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw Error("line " + std::to_string(line) + ": missing string field '" + key + "'");
  return it->get<std::string>();
}

}  // namespace

std::vector<MiCodeRecord> read_mi_records(std::istream& in) {
  return read_jsonl(in, [](const json& obj, std::size_t line) {
    MiCodeRecord r{string_field(obj, "context", line), string_field(obj, "text", line), {}};
    auto it = obj.find("codes");
    if (it == obj.end() || !it->is_array() || it->empty())
      throw Error("line " + std::to_string(line) + ": 'codes' must be a non-empty string array");
    for (const auto& c : *it) {
      if (!c.is_string()) throw Error("line " + std::to_string(line) + ": 'codes' must be a string array");
      r.codes.push_back(c.get<std::string>());
      try {
        map_mi_code(r.codes.back());
      } catch (const Error& e) {
        throw Error("line " + std::to_string(line) + ": " + e.what());
      }
    }
    return r;
  });
}

std::vector<ConsensusRecord> read_consensus_records(std::istream& in) {
  return read_jsonl(in, [](const json& obj, std::size_t line) {
    ConsensusRecord r{string_field(obj, "context", line), string_field(obj, "text", line), 0};
    auto it = obj.find("scale");
    if (it == obj.end() || !it->is_number_integer())
      throw Error("line " + std::to_string(line) + ": missing integer field 'scale'");
    r.scale = it->get<int>();
    if (r.scale < 1 || r.scale > 5) throw Error("line " + std::to_string(line) + ": scale must be in 1..5");
    return r;
  });
}

Dataset convert_mi(std::span<const MiCodeRecord> records) {
  std::vector<AnnotatedItem> items;
  for (std::size_t i = 0; i < records.size(); ++i) items.push_back(mi_to_item(records[i], "mi-" + std::to_string(i + 1)));
  return Dataset(std::move(items), 2);
}

Dataset convert_consensus(std::span<const ConsensusRecord> records, RngSeed seed) {
  std::vector<AnnotatedItem> items;
  for (std::size_t i = 0; i < records.size(); ++i)
    items.push_back(consensus_to_item(records[i], "mic-" + std::to_string(i + 1), derive_seed(seed, i)));
  return Dataset(std::move(items), 2);
}

void write_truth(std::ostream& out, const Dataset& dataset, const SyntheticTruth& truth) {
  for (const auto& item : dataset.items()) {
    auto it = truth.find(item.id);
    if (it == truth.end()) continue;
    json obj;
    obj["id"] = item.id;
    obj["rho_star"] = std::vector<double>(it->second.probs().begin(), it->second.probs().end());
    out << obj.dump() << '\n';
  }
}

SyntheticTruth read_truth(std::istream& in) {
  SyntheticTruth truth;
  auto rows = read_jsonl(in, [](const json& obj, std::size_t line) {
    const std::string id = string_field(obj, "id", line);
    auto it = obj.find("rho_star");
    if (it == obj.end() || !it->is_array()) throw Error("line " + std::to_string(line) + ": missing 'rho_star' array");
    try {
      return std::make_pair(id, PrefDist(it->get<std::vector<double>>()));
    } catch (const std::exception& e) {
      throw Error("line " + std::to_string(line) + ": " + e.what());
    }
  });
  for (auto& [id, p] : rows) truth.insert_or_assign(id, p);
  return truth;
}

SyntheticTruth read_truth(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_truth(in);
}

Simulation simulate_annotators(const SimulationConfig& config) {
  if (config.n_items < 1 || config.n_annotators < 1) throw Error("simulate: need >= 1 item and annotator");
  if (config.text_layers < 1 || config.tokens_per_layer < 1 || config.context_vocab < 1 || config.proposals < 1)
    throw Error("simulate: invalid vocabulary shape");
  Rng rng(config.seed);

  std::vector<std::vector<std::string>> layers(config.text_layers);
  std::vector<std::string> text_vocab;
  for (std::size_t l = 0; l < config.text_layers; ++l) {
    for (std::size_t t = 0; t < config.tokens_per_layer; ++t) {
      layers[l].push_back("w" + std::to_string(l + 1) + static_cast<char>('a' + t % 26) +
                          (t >= 26 ? std::to_string(t / 26) : std::string()));
      text_vocab.push_back(layers[l].back());
    }
  }
  std::vector<std::string> context_vocab;
  for (std::size_t c = 0; c < config.context_vocab; ++c) context_vocab.push_back("c" + std::to_string(c));

  // Planted acceptability: weight per text-token unigram bucket on class 0.
  Scorer planted(2, config.dim);
  for (const auto& tok : text_vocab) {
    const TokenSeq one{tok};
    const auto f = featurize(std::span<const std::string>{}, one, config.dim);
    planted.weights()(0, f.indices.back()) = rng.normal(0.0, config.planted_scale);
  }

  // Context -> token affinities shape which texts are likely for a context.
  Matrix affinity(config.context_vocab, text_vocab.size());
  for (double& a : affinity.data()) a = rng.normal(0.0, 1.0);

  std::vector<AnnotatedItem> items;
  SyntheticTruth truth;
  items.reserve(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    TokenSeq context;
    std::vector<std::size_t> ctx_ids;
    for (std::size_t c = 0; c < config.context_len; ++c) {
      ctx_ids.push_back(rng.index(config.context_vocab));
      context.push_back(context_vocab[ctx_ids.back()]);
    }

    const double u = std::clamp(rng.uniform(), 1e-6, 1.0 - 1e-6);
    const double target = std::log(u / (1.0 - u));
    TokenSeq best_text;
    double best_gap = INFINITY;
    for (std::size_t prop = 0; prop < config.proposals; ++prop) {
      TokenSeq text;
      for (std::size_t l = 0; l < config.text_layers; ++l) {
        std::vector<double> w(config.tokens_per_layer);
        for (std::size_t t = 0; t < w.size(); ++t) {
          double s = 0.0;
          for (std::size_t c : ctx_ids) s += affinity(c, l * config.tokens_per_layer + t);
          w[t] = s;
        }
        softmax_inplace(w);
        text.push_back(layers[l][rng.categorical(w)]);
      }
      const auto z = planted.logits(featurize(context, text, config.dim));
      const double logit = z[0] - z[1];
      if (std::abs(logit - target) < best_gap) {
        best_gap = std::abs(logit - target);
        best_text = std::move(text);
      }
    }

    AnnotatedItem item;
    item.id = "sim-" + std::to_string(i + 1);
    item.context = std::move(context);
    item.text = std::move(best_text);
    const PrefDist rho = score(planted, item.context, item.text);
    std::vector<int> ann;
    for (std::size_t a = 0; a < config.n_annotators; ++a) ann.push_back(rng.uniform() < rho[0] ? 0 : 1);
    item.prior = empirical_prior(ann, 2, 0.0);
    item.raw_annotations = std::move(ann);
    truth.emplace(item.id, rho);
    items.push_back(std::move(item));
  }
  return Simulation{Dataset(std::move(items), 2), std::move(truth), std::move(planted), std::move(text_vocab)};
}

}  // namespace dpm
