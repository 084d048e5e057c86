#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dpm/preference.hpp"
#include "dpm/seqgen.hpp"

namespace dpm {

struct CalibConfig {
  std::size_t k = 10;
  // Base pairwise margin; the pair (i, j) of a ranked list needs margin * (j - i).
  double margin = 0.001;
  // Weight of the reference NLL term. Unset means "same as margin".
  std::optional<double> nll_weight;
  double length_penalty = 1.0;
  double lr = 1.0;
  int steps = 100;
  RngSeed seed{};
  double diversity_penalty = 0.5;
  // Candidates per held-out input when measuring alignment.
  std::size_t eval_k = 10;
  // REINFORCE arm only.
  double nucleus_p = 0.9;
  double baseline_momentum = 0.9;

  double reference_weight() const { return nll_weight.value_or(margin); }
};

/// Alignment between generator likelihood and preference on fresh candidate sets.
struct AlignmentMetrics {
  // Preference score of the candidate with the highest length-normalized log-probability.
  double top1_pref = 0.0;
  // Spearman correlation between likelihood order and preference order.
  double spearman = 0.0;
  // max - min preference score over the set.
  double spread = 0.0;
};

struct CalibReport {
  std::vector<double> loss_trace;
  // REINFORCE only: mean sampled reward per step.
  std::vector<double> reward_trace;
  // Training inputs processed per second of update-loop wall time.
  double samples_per_second = 0.0;
  // Wall time of one-time work outside the update loop (candidate generation and ranking).
  double setup_seconds = 0.0;
  AlignmentMetrics pre;
  AlignmentMetrics post;
};

struct CalibrationResult {
  SeqModel model;
  CalibReport report;
};

// One set per input via diverse beam search, candidates in decode order.
std::vector<CandidateSet> generate_candidates(const SeqModel& model, std::span<const TokenSeq> inputs, std::size_t k,
                                              double diversity_penalty);

// Fills pref_score and sorts each set by score descending, ties by decode_index.
std::vector<CandidateSet> rank_by_preference(const Scorer& scorer, const Vocab& vocab, std::vector<CandidateSet> sets);

double length_normalized_logp(double total_logp, std::size_t length, double alpha);

// Sum_i Sum_{j>i} max(0, P_j - P_i + margin * (j - i)) for an already ranked list.
double ranking_loss(std::span<const double> normalized_logps, double margin);
// Same, with P recomputed under the model's current weights.
double ranking_loss(const SeqModel& model, const CandidateSet& ranked, double margin, double alpha);

// -w * mean_t log G(y_t | x, y_<t) + ranking loss; w = config.reference_weight().
// The reference ends with "</s>". Hinge subgradient at the kink is 0.
LossAndGrad calibration_loss_and_grad(const SeqModel& model, const CandidateSet& ranked, std::span<const std::string> reference,
                                      const CalibConfig& config);

AlignmentMetrics alignment_metrics(const SeqModel& model, const Scorer& scorer, std::span<const TokenSeq> inputs,
                                   const CalibConfig& config);

// Candidates are generated from the input model once, ranked once, then
// `steps` gradient steps on the mean calibration loss over the training pairs.
// Pre/post metrics are measured on `heldout`.
CalibrationResult calibrate(const SeqModel& model, const Scorer& scorer, std::span<const SeqPair> train,
                            std::span<const TokenSeq> heldout, const CalibConfig& config);

// Online policy gradient: each step samples one nucleus candidate per input,
// rewards it with the preference score and weights its NLL gradient by the
// reward minus a moving-average baseline.
CalibrationResult reinforce_baseline(const SeqModel& model, const Scorer& scorer, std::span<const TokenSeq> inputs,
                                     std::span<const TokenSeq> heldout, const CalibConfig& config);

// Average ranks for ties; 0 when either side is constant.
double spearman_correlation(std::span<const double> a, std::span<const double> b);

// "step,loss" rows followed by a "metric,value" block.
void write_calib_report_csv(std::ostream& out, const CalibReport& report);

}  // namespace dpm
