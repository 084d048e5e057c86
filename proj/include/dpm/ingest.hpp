#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpm/core.hpp"
#include "dpm/preference.hpp"

namespace dpm {

// The 15 fine-grained MI codes in table order. Codes 1-11 (MI Adherent and
// Relational) are acceptable, 12-15 (MI Non-Adherent) unacceptable.
inline constexpr std::array<std::string_view, 15> kMiCodes = {
    "Advise with Permission", "Affirm",           "Emphasize Autonomy",        "Support",
    "Closed Question",        "Open Question",    "Simple Reflection",         "Complex Reflection",
    "Give Information",       "Self-Disclose",    "Other",                     "Advise without Permission",
    "Confront",               "Direct",           "Warn",
};

// 0 = acceptable, 1 = unacceptable. Throws Error naming unknown codes.
int map_mi_code(std::string_view code);

struct MiCodeRecord {
  std::string context;
  std::string text;
  std::vector<std::string> codes;
};

struct ConsensusRecord {
  std::string context;
  std::string text;
  int scale = 0;
};

AnnotatedItem mi_to_item(const MiCodeRecord& record, std::string id);

// Closed interval of the acceptable-class probability for a 1..5 consensus scale.
std::pair<double, double> consensus_bracket(int scale);
// beta ~ U(bracket), prior = (beta, 1 - beta), no raw annotations.
AnnotatedItem consensus_to_item(const ConsensusRecord& record, std::string id, RngSeed seed);

// JSONL readers. Ids are "mi-<line>" / "mic-<line>"; record i of a consensus
// file draws beta from derive_seed(seed, i).
std::vector<MiCodeRecord> read_mi_records(std::istream& in);
std::vector<ConsensusRecord> read_consensus_records(std::istream& in);
Dataset convert_mi(std::span<const MiCodeRecord> records);
Dataset convert_consensus(std::span<const ConsensusRecord> records, RngSeed seed);

/// Ground-truth universal preference per item id.
using SyntheticTruth = std::map<std::string, PrefDist>;

void write_truth(std::ostream& out, const Dataset& dataset, const SyntheticTruth& truth);
SyntheticTruth read_truth(std::istream& in);
SyntheticTruth read_truth(const std::filesystem::path& path);

struct SimulationConfig {
  std::size_t n_items = 200;
  std::size_t n_annotators = 3;
  // Texts have one token per layer; layer t draws from its own token set.
  std::size_t text_layers = 4;
  std::size_t tokens_per_layer = 5;
  std::size_t context_vocab = 8;
  std::size_t context_len = 3;
  // Std-dev of the planted per-token acceptability weights.
  double planted_scale = 1.2;
  // Random texts tried per item when matching the drawn rho*.
  std::size_t proposals = 20;
  std::uint32_t dim = kDefaultFeatureDim;
  RngSeed seed{};
};

struct Simulation {
  Dataset dataset;
  SyntheticTruth truth;
  // Linear scorer that generated rho*; realizable by the Scorer family.
  Scorer planted;
  // Text tokens in layer order; the generator vocabulary is built from these.
  std::vector<std::string> text_vocab;
};

// For each item: rho*_acceptable ~ Beta(1,1); a text is chosen among random
// proposals so the planted scorer's output is closest to it, and rho* is set
// to that output exactly; annotations are n_annotators i.i.d. draws from rho*.
Simulation simulate_annotators(const SimulationConfig& config);

}  // namespace dpm
