#pragma once

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpm/error.hpp"

namespace dpm {

// Probabilities are clamped to this floor before any logarithm.
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kSumTolerance = 1e-9;
inline constexpr std::uint32_t kDefaultFeatureDim = 1u << 16;

using TokenSeq = std::vector<std::string>;

// Whitespace tokenization used by every file reader.
TokenSeq tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

inline double clamped_log(double p) { return std::log(p < kProbFloor ? kProbFloor : (p > 1.0 ? 1.0 : p)); }

/// Probability vector over C preference classes. Class 0 is "acceptable",
/// class 1 "unacceptable" in the two-class setting.
class PrefDist {
 public:
  PrefDist() = default;
  // Throws Error unless every entry is in [0,1] and the sum is 1 within kSumTolerance.
  explicit PrefDist(std::vector<double> probs);

  static PrefDist uniform(std::size_t classes);
  static PrefDist one_hot(std::size_t classes, std::size_t k);
  // Divides by the sum; throws if the sum is not positive.
  static PrefDist normalized(std::vector<double> weights);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t k) const { return probs_[k]; }
  std::span<const double> probs() const { return probs_; }
  std::size_t argmax() const;

  bool operator==(const PrefDist&) const = default;

 private:
  std::vector<double> probs_;
};

struct AnnotatedItem {
  std::string id;
  TokenSeq context;
  TokenSeq text;
  PrefDist prior;
  std::optional<std::vector<int>> raw_annotations;
};

class Dataset {
 public:
  Dataset() = default;
  // Validates shared class count and unique ids.
  Dataset(std::vector<AnnotatedItem> items, std::size_t class_count);

  std::span<const AnnotatedItem> items() const { return items_; }
  const AnnotatedItem& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t class_count() const { return class_count_; }

 private:
  std::vector<AnnotatedItem> items_;
  std::size_t class_count_ = 2;
};

/// Sparse hashed feature vector. Index 0 is the bias feature.
struct FeatureVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  std::uint32_t dim = 0;

  std::size_t nnz() const { return indices.size(); }
  bool operator==(const FeatureVector&) const = default;
};

// Hashed bag of text unigrams and bigrams plus context x text unigram cross
// features, bucketed into [1, dim) with FNV-1a. Values are raw counts.
FeatureVector featurize(std::span<const std::string> context, std::span<const std::string> text,
                        std::uint32_t dim);
FeatureVector featurize(std::span<const std::string_view> context,
                        std::span<const std::string_view> text, std::uint32_t dim);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 14695981039346656037ull);

PrefDist empirical_prior(std::span<const int> annotations, std::size_t classes, double epsilon = 0.0);

// Sum_k p_k ln(p_k / q_k) with 0 ln 0 = 0 and q clamped to kProbFloor.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double kl_divergence(const PrefDist& p, const PrefDist& q);

void softmax_inplace(std::span<double> logits);

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v);
  // this += scale * other
  void add_scaled(const Matrix& other, double scale);
  double max_abs() const;
  bool all_finite() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double sparse_dot(std::span<const double> dense, const FeatureVector& f);
// dense += scale * f
void sparse_axpy(std::span<double> dense, const FeatureVector& f, double scale);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;
};

struct RngSeed {
  std::uint64_t value = 0;
};

// Seeded generator shared by every stochastic operation.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  double normal(double mean, double stddev);
  // Draw from unnormalized non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Derives independent child seeds (splitmix64 finalizer).
RngSeed derive_seed(RngSeed base, std::uint64_t stream);

}  // namespace dpm
