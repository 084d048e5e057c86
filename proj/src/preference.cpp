#include "dpm/preference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "dpm/dataset_io.hpp"

namespace dpm {

// ---------------------------------------------------------------------------
// Scorer

Scorer::Scorer(std::size_t classes, std::uint32_t dim) : weights_(classes, dim, 0.0) {
  if (classes < 2) throw Error("Scorer: need at least 2 classes");
  if (dim < 2) throw Error("Scorer: dim must be >= 2");
}

Scorer::Scorer(Matrix weights) : weights_(std::move(weights)) {
  if (weights_.rows() < 2 || weights_.cols() < 2) throw Error("Scorer: weight matrix too small");
}

std::vector<double> Scorer::logits(const FeatureVector& f) const {
  if (f.dim != dim())
    throw Error("score: feature dim " + std::to_string(f.dim) + " does not match scorer dim " +
                std::to_string(dim()));
  std::vector<double> z(classes());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = sparse_dot(weights_.row(k), f);
  return z;
}

std::vector<double> Scorer::probabilities(const FeatureVector& f) const {
  auto z = logits(f);
  softmax_inplace(z);
  return z;
}

PrefDist Scorer::score_features(const FeatureVector& f) const { return PrefDist(probabilities(f)); }

PrefDist score(const Scorer& scorer, std::span<const std::string> context, std::span<const std::string> text) {
  return scorer.score_features(featurize(context, text, scorer.dim()));
}

double preference_score(const Scorer& scorer, std::span<const std::string> context,
                        std::span<const std::string> text) {
  return score(scorer, context, text)[0];
}

std::vector<FeatureVector> featurize_dataset(const Dataset& dataset, std::uint32_t dim) {
  std::vector<FeatureVector> out;
  out.reserve(dataset.size());
  for (const auto& item : dataset.items()) out.push_back(featurize(item.context, item.text, dim));
  return out;
}

std::vector<PrefDist> score_all(const Scorer& scorer, std::span<const FeatureVector> features) {
  std::vector<PrefDist> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(scorer.score_features(f));
  return out;
}

// ---------------------------------------------------------------------------
// Variational refinement

AMatrix compute_a(std::span<const PrefDist> q_all) {
  if (q_all.empty()) throw Error("compute_a: empty q list");
  const std::size_t n = q_all.size();
  const std::size_t c = q_all[0].size();
  AMatrix out{Matrix(n, c)};
  std::vector<double> col_sum(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (q_all[i].size() != c) throw Error("compute_a: inconsistent class counts");
    for (std::size_t k = 0; k < c; ++k) {
      const double q = std::max(q_all[i][k], kProbFloor);
      out.a(i, k) = q;
      col_sum[k] += q;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) out.a(i, k) /= col_sum[k];
  return out;
}

PosteriorTargets compute_r(std::span<const PrefDist> priors, std::span<const PrefDist> q_all) {
  if (priors.size() != q_all.size()) throw Error("compute_r: priors and q lists differ in length");
  const AMatrix a = compute_a(q_all);
  PosteriorTargets out;
  out.r.reserve(priors.size());
  out.alphas.reserve(priors.size());
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const std::size_t c = priors[i].size();
    if (c != a.a.cols()) throw Error("compute_r: prior/q class count mismatch at item " + std::to_string(i));
    std::vector<double> u(c);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      u[k] = priors[i][k] * a.a(i, k);
      total += u[k];
    }
    if (!(total > 0.0)) throw Error("degenerate posterior at item " + std::to_string(i));
    const double alpha = 1.0 / total;
    for (double& v : u) v *= alpha;
    out.r.push_back(PrefDist::normalized(std::move(u)));
    out.alphas.push_back(alpha);
  }
  return out;
}

namespace {

void check_features(const Scorer& scorer, std::span<const FeatureVector> features, std::size_t targets) {
  if (features.size() != targets) throw Error("loss: features and targets differ in length");
  for (const auto& f : features)
    if (f.dim != scorer.dim()) throw Error("loss: feature dim does not match scorer dim");
}

// Accumulates dL/dz (per-class logit gradient) into the weight gradient.
void backprop_logits(Matrix& grad, const FeatureVector& f, std::span<const double> dz) {
  for (std::size_t k = 0; k < dz.size(); ++k)
    if (dz[k] != 0.0) sparse_axpy(grad.row(k), f, dz[k]);
}

}  // namespace

LossAndGrad dpm_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                              std::span<const PrefDist> targets) {
  check_features(scorer, features, targets.size());
  LossAndGrad out{0.0, Matrix(scorer.classes(), scorer.dim())};
  const std::size_t c = scorer.classes();
  std::vector<double> d(c), dz(c);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (targets[i].size() != c) throw Error("dpm loss: target class count mismatch");
    const auto q = scorer.probabilities(features[i]);
    out.loss += kl_divergence(q, targets[i].probs());
    double mean_d = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      d[k] = clamped_log(q[k]) - clamped_log(targets[i][k]);
      mean_d += q[k] * d[k];
    }
    for (std::size_t k = 0; k < c; ++k) dz[k] = q[k] * (d[k] - mean_d);
    backprop_logits(out.grad, features[i], dz);
  }
  return out;
}

LossAndGrad dpm_loss_and_grad(const Scorer& scorer, const Dataset& dataset, const PosteriorTargets& targets) {
  const auto features = featurize_dataset(dataset, scorer.dim());
  return dpm_loss_and_grad(scorer, features, targets.r);
}

LossAndGrad cross_entropy_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                                        std::span<const PrefDist> targets) {
  check_features(scorer, features, targets.size());
  if (features.empty()) throw Error("cross entropy: no instances");
  LossAndGrad out{0.0, Matrix(scorer.classes(), scorer.dim())};
  const double inv_n = 1.0 / static_cast<double>(features.size());
  std::vector<double> dz(scorer.classes());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto q = scorer.probabilities(features[i]);
    double mass = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      out.loss -= inv_n * targets[i][k] * clamped_log(q[k]);
      mass += targets[i][k];
    }
    for (std::size_t k = 0; k < q.size(); ++k) dz[k] = inv_n * (mass * q[k] - targets[i][k]);
    backprop_logits(out.grad, features[i], dz);
  }
  return out;
}

LossAndGrad mse_loss_and_grad(const Scorer& scorer, std::span<const FeatureVector> features,
                              std::span<const PrefDist> labels) {
  check_features(scorer, features, labels.size());
  if (features.empty()) throw Error("mse: no items");
  LossAndGrad out{0.0, Matrix(scorer.classes(), scorer.dim())};
  const double inv_n = 1.0 / static_cast<double>(features.size());
  const std::size_t c = scorer.classes();
  std::vector<double> e(c), dz(c);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto q = scorer.probabilities(features[i]);
    double qe = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      e[k] = q[k] - labels[i][k];
      out.loss += inv_n * e[k] * e[k];
      qe += q[k] * e[k];
    }
    // d/dz_j sum_k e_k^2 = 2 q_j (e_j - sum_k q_k e_k)
    for (std::size_t k = 0; k < c; ++k) dz[k] = inv_n * 2.0 * q[k] * (e[k] - qe);
    backprop_logits(out.grad, features[i], dz);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

void validate_config(const TrainConfig& config) {
  if (!(config.lr > 0.0)) throw Error("train: lr must be > 0");
  if (config.inner_steps < 0 || config.max_epochs < 1) throw Error("train: invalid step counts");
}

std::vector<PrefDist> priors_of(const Dataset& dataset) {
  std::vector<PrefDist> p;
  p.reserve(dataset.size());
  for (const auto& item : dataset.items()) p.push_back(item.prior);
  return p;
}

double sum_kl(std::span<const PrefDist> q, std::span<const PrefDist> r) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += kl_divergence(q[i], r[i]);
  return total;
}

Scorer initial_scorer(std::size_t classes, const TrainConfig& config) {
  if (!config.init) return Scorer(classes, config.dim);
  if (config.init->classes() != classes || config.init->dim() != config.dim)
    throw Error("initial scorer shape does not match the dataset and feature dimension");
  return *config.init;
}

}  // namespace

TrainResult train_dpm(const Dataset& dataset, const TrainConfig& config) {
  validate_config(config);
  if (dataset.empty()) throw Error("train_dpm: empty dataset");

  const auto features = featurize_dataset(dataset, config.dim);
  const auto priors = priors_of(dataset);
  const std::size_t n = dataset.size();

  TrainResult result{initial_scorer(dataset.class_count(), config), {}};
  Scorer& scorer = result.scorer;
  TrainReport& report = result.report;
  Rng rng(config.seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto q = score_all(scorer, features);
    PosteriorTargets targets = compute_r(priors, q);
    const double objective = sum_kl(q, targets.r);
    if (!std::isfinite(objective)) throw Error("diverged at epoch " + std::to_string(epoch + 1));
    if (epoch == 0) report.first_epoch = EpochSnapshot{q, compute_a(q), targets};

    const bool done = !report.objective_trace.empty() &&
                      std::abs(report.objective_trace.back() - objective) < config.tol;
    report.objective_trace.push_back(objective);
    report.epochs_run = epoch + 1;
    if (done) {
      report.converged = true;
      break;
    }

    if (config.minibatch == 0 || config.minibatch >= n) {
      for (int s = 0; s < config.inner_steps; ++s) {
        auto lg = dpm_loss_and_grad(scorer, features, targets.r);
        scorer.weights().add_scaled(lg.grad, -config.lr / static_cast<double>(n));
      }
    } else {
      std::shuffle(order.begin(), order.end(), rng.engine());
      for (std::size_t start = 0; start < n; start += config.minibatch) {
        const std::size_t stop = std::min(n, start + config.minibatch);
        std::vector<FeatureVector> bf;
        std::vector<PrefDist> bp, bq;
        for (std::size_t j = start; j < stop; ++j) {
          bf.push_back(features[order[j]]);
          bp.push_back(priors[order[j]]);
        }
        bq = score_all(scorer, bf);
        const auto bt = compute_r(bp, bq);
        for (int s = 0; s < config.inner_steps; ++s) {
          auto lg = dpm_loss_and_grad(scorer, bf, bt.r);
          scorer.weights().add_scaled(lg.grad, -config.lr / static_cast<double>(bf.size()));
        }
      }
    }
    if (!scorer.weights().all_finite()) throw Error("diverged at epoch " + std::to_string(epoch + 1));
  }
  return result;
}

int majority_label(std::span<const int> annotations, std::size_t classes) {
  if (annotations.empty()) throw Error("no annotations");
  std::vector<int> counts(classes, 0);
  for (int a : annotations) {
    if (a < 0 || static_cast<std::size_t>(a) >= classes) throw Error("majority: annotation out of range");
    ++counts[static_cast<std::size_t>(a)];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

namespace {

using LossFn = LossAndGrad (*)(const Scorer&, std::span<const FeatureVector>, std::span<const PrefDist>);

TrainResult gradient_descent(std::size_t classes, std::span<const FeatureVector> features,
                             std::span<const PrefDist> targets, const TrainConfig& config, LossFn loss_fn) {
  TrainResult result{initial_scorer(classes, config), {}};
  const int budget = config.inner_steps * config.max_epochs;
  for (int step = 0; step < budget; ++step) {
    auto lg = loss_fn(result.scorer, features, targets);
    if (!std::isfinite(lg.loss)) throw Error("diverged at step " + std::to_string(step + 1));
    const bool done = !result.report.objective_trace.empty() &&
                      std::abs(result.report.objective_trace.back() - lg.loss) < config.tol;
    result.report.objective_trace.push_back(lg.loss);
    result.report.epochs_run = step + 1;
    if (done) {
      result.report.converged = true;
      break;
    }
    result.scorer.weights().add_scaled(lg.grad, -config.lr);
  }
  return result;
}

void require_annotations(const Dataset& dataset) {
  for (const auto& item : dataset.items())
    if (!item.raw_annotations || item.raw_annotations->empty())
      throw Error("missing raw_annotations for item '" + item.id + "'");
}

}  // namespace

TrainResult train_majority(const Dataset& dataset, const TrainConfig& config) {
  validate_config(config);
  require_annotations(dataset);
  const auto features = featurize_dataset(dataset, config.dim);
  std::vector<PrefDist> targets;
  for (const auto& item : dataset.items())
    targets.push_back(PrefDist::one_hot(dataset.class_count(),
                                        static_cast<std::size_t>(majority_label(*item.raw_annotations,
                                                                                dataset.class_count()))));
  return gradient_descent(dataset.class_count(), features, targets, config, &cross_entropy_loss_and_grad);
}

TrainResult train_soft(const Dataset& dataset, const TrainConfig& config) {
  validate_config(config);
  if (dataset.empty()) throw Error("train_soft: empty dataset");
  const auto features = featurize_dataset(dataset, config.dim);
  return gradient_descent(dataset.class_count(), features, priors_of(dataset), config, &mse_loss_and_grad);
}

TrainResult train_wo_agg(const Dataset& dataset, const TrainConfig& config) {
  validate_config(config);
  require_annotations(dataset);
  std::vector<FeatureVector> features;
  std::vector<PrefDist> targets;
  for (const auto& item : dataset.items()) {
    const auto f = featurize(item.context, item.text, config.dim);
    for (int a : *item.raw_annotations) {
      features.push_back(f);
      targets.push_back(PrefDist::one_hot(dataset.class_count(), static_cast<std::size_t>(a)));
    }
  }
  return gradient_descent(dataset.class_count(), features, targets, config, &cross_entropy_loss_and_grad);
}

// ---------------------------------------------------------------------------
// Serialization

void save_scorer(std::ostream& out, const Scorer& scorer) {
  out.write("DPM1", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(scorer.classes()));
  detail::write_u32(out, scorer.dim());
  for (double w : scorer.weights().data()) detail::write_f64(out, w);
}

void save_scorer(const std::filesystem::path& path, const Scorer& scorer) {
  auto out = open_output(path, true);
  save_scorer(out, scorer);
  if (!out) throw IoError("write failed: " + path.string());
}

Scorer load_scorer(std::istream& in) {
  detail::expect_magic(in, "DPM1");
  const std::uint32_t c = detail::read_u32(in);
  const std::uint32_t dim = detail::read_u32(in);
  if (c < 2 || dim < 2) throw Error("scorer file: invalid shape");
  Matrix w(c, dim);
  for (double& v : w.data()) v = detail::read_f64(in);
  return Scorer(std::move(w));
}

Scorer load_scorer(const std::filesystem::path& path) {
  auto in = open_input(path, true);
  try {
    return load_scorer(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_train_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,objective\n";
  char buf[64];
  for (std::size_t e = 0; e < report.objective_trace.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.17g", report.objective_trace[e]);
    out << (e + 1) << ',' << buf << '\n';
  }
}

}  // namespace dpm
