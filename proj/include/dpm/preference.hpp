#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dpm/core.hpp"

namespace dpm {

/// Log-linear preference classifier over hashed features: softmax(W x).
/// Row k of the weight matrix holds the parameters of class k.
class Scorer {
 public:
  Scorer() = default;
  // All-zero weights, i.e. the uniform predictor.
  Scorer(std::size_t classes, std::uint32_t dim);
  explicit Scorer(Matrix weights);

  std::size_t classes() const { return weights_.rows(); }
  std::uint32_t dim() const { return static_cast<std::uint32_t>(weights_.cols()); }
  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }

  std::vector<double> logits(const FeatureVector& f) const;
  std::vector<double> probabilities(const FeatureVector& f) const;
  PrefDist score_features(const FeatureVector& f) const;

  bool operator==(const Scorer&) const = default;

 private:
  Matrix weights_;
};

PrefDist score(const Scorer& scorer, std::span<const std::string> context, std::span<const std::string> text);
// Probability of the acceptable class (index 0).
double preference_score(const Scorer& scorer, std::span<const std::string> context,
                        std::span<const std::string> text);

std::vector<FeatureVector> featurize_dataset(const Dataset& dataset, std::uint32_t dim);
std::vector<PrefDist> score_all(const Scorer& scorer, std::span<const FeatureVector> features);

// ---------------------------------------------------------------------------
// Variational refinement

/// a[i][rho] = q_i(rho) / sum_j q_j(rho); N x C with unit column sums.
struct AMatrix {
  Matrix a;
};

/// r_i = alpha_i * p_i * a[i], one entry per item.
struct PosteriorTargets {
  std::vector<PrefDist> r;
  std::vector<double> alphas;
};

AMatrix compute_a(std::span<const PrefDist> q_all);
// Uses the raw priors so classes with zero prior mass stay exactly zero.
PosteriorTargets compute_r(std::span<const PrefDist> priors, std::span<const PrefDist> q_all);

// Sum_i KL(q_i || r_i) and its gradient w.r.t. the weights, r held fixed.
LossAndGrad dpm_loss_and_grad(const Scorer& scorer, const Dataset& dataset, const PosteriorTargets& targets);
LossAndGrad dpm_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                              std::span<const PrefDist> targets);

// Mean over instances of -sum_k t_k log q_k.
LossAndGrad cross_entropy_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                                        std::span<const PrefDist> targets);
// Mean over items of ||q - l||^2.
LossAndGrad mse_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                              std::span<const PrefDist> labels);

struct TrainConfig {
  double lr = 0.5;
  int inner_steps = 5;
  int max_epochs = 200;
  double tol = 1e-7;
  RngSeed seed{};
  // 0 = full batch. Otherwise the a-matrix denominator runs over each shuffled minibatch.
  std::size_t minibatch = 0;
  std::uint32_t dim = kDefaultFeatureDim;
  // Warm start; zero weights when unset.
  std::optional<Scorer> init;
};

struct EpochSnapshot {
  std::vector<PrefDist> q;
  AMatrix a;
  PosteriorTargets targets;
};

struct TrainReport {
  // d-PM: Sum_i KL(q_i || r_i) at the start of each epoch.
  // Baselines: training loss before each gradient step.
  std::vector<double> objective_trace;
  int epochs_run = 0;
  bool converged = false;
  std::optional<EpochSnapshot> first_epoch;
};

struct TrainResult {
  Scorer scorer;
  TrainReport report;
};

// Alternates (1) a snapshot of q, (2) a-matrix and posterior targets from the
// snapshot, (3) inner gradient steps on the KL objective with targets fixed.
// Each step moves by lr times the gradient of the per-item mean.
TrainResult train_dpm(const Dataset& dataset, const TrainConfig& config);

// Lowest class index wins ties.
int majority_label(std::span<const int> annotations, std::size_t classes);

// Budget: inner_steps * max_epochs full-batch steps, early exit on |dloss| < tol.
TrainResult train_majority(const Dataset& dataset, const TrainConfig& config);
TrainResult train_soft(const Dataset& dataset, const TrainConfig& config);
TrainResult train_wo_agg(const Dataset& dataset, const TrainConfig& config);

// Binary format: "DPM1", C and dim as u32 LE, then C*dim f64 LE row-major.
void save_scorer(std::ostream& out, const Scorer& scorer);
void save_scorer(const std::filesystem::path& path, const Scorer& scorer);
Scorer load_scorer(std::istream& in);
Scorer load_scorer(const std::filesystem::path& path);

// "epoch,objective" with 1-based epochs.
void write_train_report_csv(std::ostream& out, const TrainReport& report);

}  // namespace dpm
