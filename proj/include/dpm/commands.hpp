#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dpm/calibrate.hpp"
#include "dpm/ingest.hpp"
#include "dpm/preference.hpp"
#include "dpm/seqgen.hpp"

namespace dpm {

enum class PrefKind { Dpm, Major, Soft, WoAgg };

// "dpm", "major", "soft", "wo-agg".
PrefKind parse_pref_kind(const std::string& name);
std::string pref_kind_name(PrefKind kind);

TrainResult cmd_train_pref(PrefKind kind, const Dataset& dataset, const TrainConfig& config);

// "item,q_0..,a_0..,r_0..,alpha" for the first d-PM epoch.
void write_epoch_dump_csv(std::ostream& out, const Dataset& dataset, const EpochSnapshot& snapshot);

// Generator pairs: input = context, reference = text + "</s>".
std::vector<SeqPair> seq_pairs(const Dataset& dataset);

struct PipelineData {
  std::vector<SeqPair> train;
  std::vector<TokenSeq> heldout;
};

// The last round(fraction * N) items become held-out inputs.
PipelineData split_pipeline_data(const Dataset& dataset, double heldout_fraction);

struct BenchmarkConfig {
  SimulationConfig simulation;
  TrainConfig preference;
  GenTrainConfig generator;
  double heldout_fraction = 0.25;
};

/// Simulated data, a d-PM scorer trained on it, and a generator fitted to the
/// training texts.
struct Benchmark {
  Simulation simulation;
  Scorer scorer;
  SeqModel model;
  PipelineData data;
};

// Simulation, preference training and generator training all derive from config seeds.
Benchmark build_benchmark(const BenchmarkConfig& config);

/// Per-method metrics. Fields that a method does not produce stay NaN and are
/// written as empty CSV cells.
struct EvalSummary {
  std::string method;
  double mean_kl = 0.0;
  double accuracy = 0.0;
  AlignmentMetrics pre;
  AlignmentMetrics post;
};

struct NamedScorer {
  std::string name;
  Scorer scorer;
};

// Mean KL(rho* || q) and accuracy of argmax q against argmax rho*.
// Throws Error listing dataset ids missing from the truth.
std::vector<EvalSummary> cmd_eval(std::span<const NamedScorer> scorers, const SyntheticTruth& truth,
                                  const Dataset& dataset);
void write_eval_csv(std::ostream& out, std::span<const EvalSummary> rows);

struct SweepRow {
  std::size_t k = 0;
  CalibReport report;
};

std::vector<SweepRow> cmd_sweep_k(std::span<const std::size_t> ks, const SeqModel& model, const Scorer& scorer,
                                  const PipelineData& data, const CalibConfig& config);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

struct MethodBlock {
  std::string method;
  CalibReport report;
};

// Contrastive calibration and REINFORCE on the same data, seed and step budget.
std::vector<MethodBlock> cmd_compare_rl(const SeqModel& model, const Scorer& scorer, const PipelineData& data,
                                        const CalibConfig& config);
// "method,step,loss,samples_per_second,post_top1_pref,post_spearman,post_spread".
void write_compare_csv(std::ostream& out, std::span<const MethodBlock> blocks);

}  // namespace dpm
