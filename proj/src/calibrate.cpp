#include "dpm/calibrate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace dpm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void validate(const CalibConfig& config) {
  if (config.k < 2) throw Error("calibrate: K must be >= 2");
  if (!(config.margin >= 0.0)) throw Error("calibrate: margin must be >= 0");
  if (!(config.length_penalty >= 0.0)) throw Error("calibrate: length penalty must be >= 0");
  if (!(config.lr > 0.0)) throw Error("calibrate: lr must be > 0");
  if (config.steps < 0) throw Error("calibrate: steps must be >= 0");
  if (config.eval_k < 2) throw Error("calibrate: eval K must be >= 2");
  if (!(config.reference_weight() >= 0.0)) throw Error("calibrate: nll weight must be >= 0");
}

// Candidate set with cached step features for every candidate and the reference.
struct CachedSet {
  std::vector<TeacherForced> candidates;
  TeacherForced reference;
};

TeacherForced teacher_force_reference(const SeqModel& model, std::span<const std::string> x,
                                      std::span<const std::string> reference) {
  if (reference.empty() || reference.back() != kEosToken) throw Error("reference must be terminated by </s>");
  std::vector<TokenId> ids{kBos};
  for (const auto& t : reference) ids.push_back(model.vocab().id(t));
  return teacher_force(model, x, ids);
}

CachedSet cache_set(const SeqModel& model, const CandidateSet& set, std::span<const std::string> reference) {
  CachedSet out;
  out.candidates.reserve(set.candidates.size());
  for (const auto& c : set.candidates) {
    if (c.length() == 0) throw Error("calibrate: empty candidate");
    out.candidates.push_back(teacher_force(model, set.input, c.tokens));
  }
  out.reference = teacher_force_reference(model, set.input, reference);
  return out;
}

// L^c for one cached set; adds scale * dL^c/dW into grad when given.
double set_loss(const SeqModel& model, const CachedSet& set, const CalibConfig& config, double scale, Matrix* grad) {
  const std::size_t k = set.candidates.size();
  std::vector<SequenceForward> fwd(k);
  std::vector<double> norm(k), coeff(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    fwd[i] = forward_sequence(model, set.candidates[i]);
    norm[i] = std::pow(static_cast<double>(set.candidates[i].length()), config.length_penalty);
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double m = fwd[j].logp / norm[j] - fwd[i].logp / norm[i] + config.margin * static_cast<double>(j - i);
      if (m > 0.0) {
        loss += m;
        coeff[j] += 1.0;
        coeff[i] -= 1.0;
      }
    }
  }
  const double w = config.reference_weight() / static_cast<double>(set.reference.length());
  const SequenceForward ref = forward_sequence(model, set.reference);
  loss -= w * ref.logp;
  if (grad) {
    for (std::size_t i = 0; i < k; ++i) add_logp_grad(model, set.candidates[i], fwd[i], scale * coeff[i] / norm[i], *grad);
    add_logp_grad(model, set.reference, ref, -scale * w, *grad);
  }
  return loss;
}

std::size_t top_by_likelihood(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

std::vector<CandidateSet> generate_candidates(const SeqModel& model, std::span<const TokenSeq> inputs, std::size_t k,
                                              double diversity_penalty) {
  if (k < 2) throw Error("generate_candidates: K must be >= 2");
  std::vector<CandidateSet> sets;
  sets.reserve(inputs.size());
  for (const auto& x : inputs) sets.push_back(CandidateSet{x, decode_diverse_beam(model, x, k, diversity_penalty)});
  return sets;
}

std::vector<CandidateSet> rank_by_preference(const Scorer& scorer, const Vocab& vocab, std::vector<CandidateSet> sets) {
  for (auto& set : sets) {
    for (auto& c : set.candidates) c.pref_score = preference_score(scorer, set.input, candidate_body(vocab, c));
    std::sort(set.candidates.begin(), set.candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (*a.pref_score != *b.pref_score) return *a.pref_score > *b.pref_score;
      return a.decode_index < b.decode_index;
    });
  }
  return sets;
}

double length_normalized_logp(double total_logp, std::size_t length, double alpha) {
  if (length == 0) throw Error("length_normalized_logp: empty candidate");
  return total_logp / std::pow(static_cast<double>(length), alpha);
}

double ranking_loss(std::span<const double> normalized_logps, double margin) {
  double loss = 0.0;
  for (std::size_t i = 0; i < normalized_logps.size(); ++i)
    for (std::size_t j = i + 1; j < normalized_logps.size(); ++j)
      loss += std::max(0.0, normalized_logps[j] - normalized_logps[i] + margin * static_cast<double>(j - i));
  return loss;
}

double ranking_loss(const SeqModel& model, const CandidateSet& ranked, double margin, double alpha) {
  std::vector<double> p;
  p.reserve(ranked.candidates.size());
  for (const auto& c : ranked.candidates) {
    const auto tf = teacher_force(model, ranked.input, c.tokens);
    p.push_back(length_normalized_logp(sequence_logp(model, tf), tf.length(), alpha));
  }
  return ranking_loss(p, margin);
}

LossAndGrad calibration_loss_and_grad(const SeqModel& model, const CandidateSet& ranked,
                                      std::span<const std::string> reference, const CalibConfig& config) {
  const CachedSet cached = cache_set(model, ranked, reference);
  LossAndGrad out{0.0, Matrix(model.vocab().size(), model.dim())};
  out.loss = set_loss(model, cached, config, 1.0, &out.grad);
  return out;
}

double spearman_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("spearman: length mismatch");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

AlignmentMetrics alignment_metrics(const SeqModel& model, const Scorer& scorer, std::span<const TokenSeq> inputs,
                                   const CalibConfig& config) {
  AlignmentMetrics m;
  if (inputs.empty()) return m;
  for (const auto& set : generate_candidates(model, inputs, config.eval_k, config.diversity_penalty)) {
    std::vector<double> p, s;
    for (const auto& c : set.candidates) {
      p.push_back(length_normalized_logp(c.total_logp, c.length(), config.length_penalty));
      s.push_back(preference_score(scorer, set.input, candidate_body(model.vocab(), c)));
    }
    m.top1_pref += s[top_by_likelihood(p)];
    m.spearman += spearman_correlation(p, s);
    m.spread += *std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end());
  }
  const double n = static_cast<double>(inputs.size());
  m.top1_pref /= n;
  m.spearman /= n;
  m.spread /= n;
  return m;
}

CalibrationResult calibrate(const SeqModel& model, const Scorer& scorer, std::span<const SeqPair> train,
                            std::span<const TokenSeq> heldout, const CalibConfig& config) {
  validate(config);
  CalibrationResult result{model, {}};
  CalibReport& report = result.report;
  report.pre = alignment_metrics(model, scorer, heldout, config);

  if (config.steps == 0 || train.empty()) {
    report.post = report.pre;
    return result;
  }

  const auto setup_start = Clock::now();
  std::vector<TokenSeq> inputs;
  inputs.reserve(train.size());
  for (const auto& p : train) inputs.push_back(p.x);
  const auto ranked = rank_by_preference(scorer, model.vocab(),
                                         generate_candidates(model, inputs, config.k, config.diversity_penalty));
  std::vector<CachedSet> cached;
  cached.reserve(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) cached.push_back(cache_set(model, ranked[i], train[i].y));
  report.setup_seconds = seconds_since(setup_start);

  SeqModel& current = result.model;
  Matrix grad(current.vocab().size(), current.dim());
  const double inv_n = 1.0 / static_cast<double>(cached.size());
  const auto loop_start = Clock::now();
  for (int step = 0; step < config.steps; ++step) {
    grad.fill(0.0);
    double loss = 0.0;
    for (const auto& set : cached) loss += inv_n * set_loss(current, set, config, inv_n, &grad);
    if (!std::isfinite(loss)) throw Error("calibration diverged at step " + std::to_string(step + 1));
    report.loss_trace.push_back(loss);
    current.weights().add_scaled(grad, -config.lr);
  }
  const double elapsed = seconds_since(loop_start);
  report.samples_per_second = static_cast<double>(config.steps) * static_cast<double>(train.size()) / elapsed;
  report.post = alignment_metrics(current, scorer, heldout, config);
  return result;
}

CalibrationResult reinforce_baseline(const SeqModel& model, const Scorer& scorer, std::span<const TokenSeq> inputs,
                                     std::span<const TokenSeq> heldout, const CalibConfig& config) {
  validate(config);
  if (!(config.nucleus_p > 0.0 && config.nucleus_p <= 1.0)) throw Error("reinforce: nucleus p must be in (0, 1]");
  CalibrationResult result{model, {}};
  CalibReport& report = result.report;
  report.pre = alignment_metrics(model, scorer, heldout, config);
  if (config.steps == 0 || inputs.empty()) {
    report.post = report.pre;
    return result;
  }

  SeqModel& current = result.model;
  Matrix grad(current.vocab().size(), current.dim());
  const std::size_t n = inputs.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::optional<double> baseline;
  std::vector<double> rewards(n);
  std::vector<TeacherForced> samples(n);

  const auto loop_start = Clock::now();
  for (int step = 0; step < config.steps; ++step) {
    double reward_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const RngSeed seed = derive_seed(config.seed, static_cast<std::uint64_t>(step) * n + i);
      const Candidate c = decode_nucleus(current, inputs[i], config.nucleus_p, seed);
      rewards[i] = preference_score(scorer, inputs[i], candidate_body(current.vocab(), c));
      samples[i] = teacher_force(current, inputs[i], c.tokens);
      reward_sum += rewards[i];
    }
    const double mean_reward = reward_sum / static_cast<double>(n);
    if (!baseline) baseline = mean_reward;

    grad.fill(0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double advantage = rewards[i] - *baseline;
      const double len = static_cast<double>(samples[i].length());
      // advantage * NLL_i, NLL_i = -(1/len) log G(sample)
      const double w = advantage * inv_n / len;
      loss -= w * sequence_logp(current, samples[i], -w, &grad);
    }
    if (!std::isfinite(loss)) throw Error("reinforce diverged at step " + std::to_string(step + 1));
    report.loss_trace.push_back(loss);
    report.reward_trace.push_back(mean_reward);
    current.weights().add_scaled(grad, -config.lr);
    *baseline = config.baseline_momentum * *baseline + (1.0 - config.baseline_momentum) * mean_reward;
  }
  const double elapsed = seconds_since(loop_start);
  report.samples_per_second = static_cast<double>(config.steps) * static_cast<double>(n) / elapsed;
  report.post = alignment_metrics(current, scorer, heldout, config);
  return result;
}

void write_calib_report_csv(std::ostream& out, const CalibReport& report) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "step,loss\n";
  for (std::size_t s = 0; s < report.loss_trace.size(); ++s) out << (s + 1) << ',' << num(report.loss_trace[s]) << '\n';
  out << "metric,value\n";
  out << "pre_top1_pref," << num(report.pre.top1_pref) << '\n';
  out << "pre_spearman," << num(report.pre.spearman) << '\n';
  out << "pre_spread," << num(report.pre.spread) << '\n';
  out << "post_top1_pref," << num(report.post.top1_pref) << '\n';
  out << "post_spearman," << num(report.post.spearman) << '\n';
  out << "post_spread," << num(report.post.spread) << '\n';
  out << "samples_per_second," << num(report.samples_per_second) << '\n';
}

}  // namespace dpm
