#include "dpm/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace dpm {

TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PrefDist

PrefDist::PrefDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.size() < 2) throw Error("PrefDist: need at least 2 classes");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("PrefDist: entry outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) throw Error("PrefDist: entries do not sum to 1");
}

PrefDist PrefDist::uniform(std::size_t classes) {
  if (classes == 0) throw Error("PrefDist: zero classes");
  return PrefDist(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

PrefDist PrefDist::one_hot(std::size_t classes, std::size_t k) {
  if (k >= classes) throw Error("PrefDist: class index out of range");
  std::vector<double> p(classes, 0.0);
  p[k] = 1.0;
  return PrefDist(std::move(p));
}

PrefDist PrefDist::normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("PrefDist: negative or non-finite weight");
    sum += w;
  }
  if (!(sum > 0.0)) throw Error("PrefDist: weights sum to zero");
  for (double& w : weights) w /= sum;
  return PrefDist(std::move(weights));
}

std::size_t PrefDist::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<AnnotatedItem> items, std::size_t class_count)
    : items_(std::move(items)), class_count_(class_count) {
  if (class_count_ < 2) throw Error("dataset: class count must be >= 2");
  std::unordered_set<std::string> seen;
  for (const auto& item : items_) {
    if (item.prior.size() != class_count_)
      throw Error("dataset: item '" + item.id + "' has " + std::to_string(item.prior.size()) +
                  " classes, expected " + std::to_string(class_count_));
    if (!seen.insert(item.id).second) throw Error("dataset: duplicate id '" + item.id + "'");
    if (item.raw_annotations) {
      for (int a : *item.raw_annotations)
        if (a < 0 || static_cast<std::size_t>(a) >= class_count_)
          throw Error("dataset: item '" + item.id + "' has annotation out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// Features

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= 1099511628211ull;
  }
  return state;
}

namespace {

constexpr std::string_view kSep = "\x1f";

class FeatureAccumulator {
 public:
  explicit FeatureAccumulator(std::uint32_t dim) : dim_(dim) {
    if (dim < 2) throw Error("featurize: dim must be >= 2");
    entries_.emplace_back(0u, 1.0);
  }

  void add(std::uint64_t hash) { entries_.emplace_back(1u + static_cast<std::uint32_t>(hash % (dim_ - 1)), 1.0); }

  FeatureVector finish() {
    std::sort(entries_.begin(), entries_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    FeatureVector out;
    out.dim = dim_;
    for (const auto& [idx, v] : entries_) {
      if (!out.indices.empty() && out.indices.back() == idx) {
        out.values.back() += v;
      } else {
        out.indices.push_back(idx);
        out.values.push_back(v);
      }
    }
    return out;
  }

 private:
  std::uint32_t dim_;
  std::vector<std::pair<std::uint32_t, double>> entries_;
};

template <typename Str>
FeatureVector featurize_impl(std::span<const Str> context, std::span<const Str> text, std::uint32_t dim) {
  FeatureAccumulator acc(dim);
  const std::uint64_t uni = fnv1a64(kSep, fnv1a64("u"));
  const std::uint64_t bi = fnv1a64(kSep, fnv1a64("b"));
  const std::uint64_t cross = fnv1a64(kSep, fnv1a64("x"));
  for (std::size_t i = 0; i < text.size(); ++i) {
    acc.add(fnv1a64(text[i], uni));
    if (i + 1 < text.size()) acc.add(fnv1a64(text[i + 1], fnv1a64(kSep, fnv1a64(text[i], bi))));
  }
  for (const auto& c : context) {
    const std::uint64_t prefix = fnv1a64(kSep, fnv1a64(c, cross));
    for (const auto& t : text) acc.add(fnv1a64(t, prefix));
  }
  return acc.finish();
}

}  // namespace

FeatureVector featurize(std::span<const std::string> context, std::span<const std::string> text,
                        std::uint32_t dim) {
  return featurize_impl(context, text, dim);
}

FeatureVector featurize(std::span<const std::string_view> context,
                        std::span<const std::string_view> text, std::uint32_t dim) {
  return featurize_impl(context, text, dim);
}

// ---------------------------------------------------------------------------
// Probability helpers

PrefDist empirical_prior(std::span<const int> annotations, std::size_t classes, double epsilon) {
  if (annotations.empty()) throw Error("no annotations");
  if (classes < 2) throw Error("empirical_prior: need at least 2 classes");
  if (!(epsilon >= 0.0)) throw Error("empirical_prior: epsilon must be >= 0");
  std::vector<double> counts(classes, 0.0);
  for (int a : annotations) {
    if (a < 0 || static_cast<std::size_t>(a) >= classes)
      throw Error("empirical_prior: annotation " + std::to_string(a) + " out of range");
    counts[static_cast<std::size_t>(a)] += 1.0;
  }
  const double denom = static_cast<double>(annotations.size()) + static_cast<double>(classes) * epsilon;
  for (double& c : counts) c = (c + epsilon) / denom;
  return PrefDist(std::move(counts));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw Error("kl_divergence: dimension mismatch (" + std::to_string(p.size()) + " vs " +
                std::to_string(q.size()) + ")");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0) kl += p[k] * (clamped_log(p[k]) - clamped_log(q[k]));
  }
  return kl < 0.0 ? 0.0 : kl;
}

double kl_divergence(const PrefDist& p, const PrefDist& q) { return kl_divergence(p.probs(), q.probs()); }

void softmax_inplace(std::span<double> logits) {
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - mx);
    sum += z;
  }
  for (double& z : logits) z /= sum;
}

// ---------------------------------------------------------------------------
// Matrix

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::add_scaled(const Matrix& other, double scale) {
  if (other.rows_ != rows_ || other.cols_ != cols_) throw Error("Matrix: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double sparse_dot(std::span<const double> dense, const FeatureVector& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.indices.size(); ++i) s += dense[f.indices[i]] * f.values[i];
  return s;
}

void sparse_axpy(std::span<double> dense, const FeatureVector& f, double scale) {
  for (std::size_t i = 0; i < f.indices.size(); ++i) dense[f.indices[i]] += scale * f.values[i];
}

// ---------------------------------------------------------------------------
// Randomness

double Rng::normal(double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error("categorical: weights sum to zero");
  double u = uniform() * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (u < weights[k]) return k;
    u -= weights[k];
  }
  // Rounding can leave u marginally above the last bucket.
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0.0) return k;
  return weights.size() - 1;
}

RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
  std::uint64_t z = base.value + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return RngSeed{z ^ (z >> 31)};
}

}  // namespace dpm
