#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpm/core.hpp"

namespace dpm {

using TokenId = std::uint32_t;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

/// Output vocabulary. Ids 0 and 1 are always BOS and EOS.
class Vocab {
 public:
  Vocab() : Vocab(std::vector<std::string>{std::string(kBosToken), std::string(kEosToken)}) {}
  // Full token list, starting with "<s>", "</s>"; tokens must be unique and non-empty.
  explicit Vocab(std::vector<std::string> tokens);
  // BOS, EOS, then each distinct content token in first-seen order.
  static Vocab from_content(std::span<const std::string> content);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::span<const std::string> tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view token) const;
  // Throws Error("unknown token ...").
  TokenId id(std::string_view token) const;
  std::vector<TokenId> ids(std::span<const std::string> tokens) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Log-linear autoregressive generator. The next-token distribution is
/// softmax(W f) where f = featurize(input, last ngram_order tokens of the prefix).
class SeqModel {
 public:
  SeqModel() = default;
  // Zero weights: every step is uniform over the vocabulary.
  SeqModel(Vocab vocab, std::uint32_t dim, std::uint32_t ngram_order = 2, std::uint32_t max_len = 16);
  SeqModel(Vocab vocab, Matrix weights, std::uint32_t ngram_order = 2, std::uint32_t max_len = 16);

  const Vocab& vocab() const { return vocab_; }
  const Matrix& weights() const { return weights_; }
  Matrix& weights() { return weights_; }
  std::uint32_t dim() const { return static_cast<std::uint32_t>(weights_.cols()); }
  std::uint32_t ngram_order() const { return ngram_order_; }
  std::uint32_t max_len() const { return max_len_; }
  void set_max_len(std::uint32_t max_len);

  bool operator==(const SeqModel&) const = default;

 private:
  Vocab vocab_;
  Matrix weights_;
  std::uint32_t ngram_order_ = 2;
  std::uint32_t max_len_ = 16;
};

FeatureVector step_features(const SeqModel& model, std::span<const std::string> x, std::span<const TokenId> prefix);

// Probability vector over the whole vocabulary. The prefix must start with BOS.
std::vector<double> next_token_dist(const SeqModel& model, std::span<const std::string> x,
                                    std::span<const std::string> prefix);
std::vector<double> next_token_dist(const SeqModel& model, std::span<const std::string> x,
                                    std::span<const TokenId> prefix);

/// Input/reference pair. The reference ends with "</s>".
struct SeqPair {
  TokenSeq x;
  TokenSeq y;
};

// Appends EOS to a reference body.
SeqPair make_seq_pair(TokenSeq x, TokenSeq body);

/// Per-step features of a fixed token sequence, cached so the same sequence
/// can be rescored under changing weights without re-hashing.
struct TeacherForced {
  std::vector<FeatureVector> steps;
  std::vector<TokenId> targets;

  std::size_t length() const { return targets.size(); }
};

// `tokens` starts with BOS; one step per following token.
TeacherForced teacher_force(const SeqModel& model, std::span<const std::string> x, std::span<const TokenId> tokens);

// Sum_t log G(y_t | x, y_<t). When grad is non-null adds coeff * d/dW of that sum.
double sequence_logp(const SeqModel& model, const TeacherForced& seq, double coeff = 0.0, Matrix* grad = nullptr,
                     std::vector<double>* token_logps = nullptr);

/// Step distributions of a teacher-forced sequence (length x vocab, row-major)
/// kept so the gradient can be formed without a second forward pass.
struct SequenceForward {
  std::vector<double> probs;
  double logp = 0.0;
};

SequenceForward forward_sequence(const SeqModel& model, const TeacherForced& seq);
// Adds coeff * d/dW log G(seq) using the stored distributions.
void add_logp_grad(const SeqModel& model, const TeacherForced& seq, const SequenceForward& fwd, double coeff,
                   Matrix& grad);

// Mean over pairs of the per-token negative log-likelihood, with exact gradient.
LossAndGrad nll_loss_and_grad(const SeqModel& model, std::span<const SeqPair> pairs);

struct GenTrainConfig {
  std::uint32_t dim = 1u << 12;
  std::uint32_t ngram_order = 2;
  std::uint32_t max_len = 16;
  double lr = 2.0;
  int steps = 300;
};

struct GenTrainResult {
  SeqModel model;
  std::vector<double> loss_trace;
};

// Full-batch gradient descent on nll_loss from zero weights.
GenTrainResult train_generator(const Vocab& vocab, std::span<const SeqPair> pairs, const GenTrainConfig& config);

// ---------------------------------------------------------------------------
// Decoding

struct Candidate {
  // Starts with BOS; ends with EOS unless truncated at max_len.
  std::vector<TokenId> tokens;
  // One entry per generated token, unpenalized model log-probabilities.
  std::vector<double> token_logps;
  double total_logp = 0.0;
  std::optional<double> pref_score;
  // Position in the decoder's output, used as the ranking tie-break.
  std::size_t decode_index = 0;

  bool finished() const { return !tokens.empty() && tokens.back() == kEos; }
  std::size_t length() const { return token_logps.size(); }

  bool operator==(const Candidate&) const = default;
};

struct CandidateSet {
  TokenSeq input;
  std::vector<Candidate> candidates;
};

// Generated tokens with BOS and a trailing EOS removed.
TokenSeq candidate_body(const Vocab& vocab, const Candidate& c);
TokenSeq candidate_tokens(const Vocab& vocab, const Candidate& c);

// Argmax per step, ties to the lowest id. BOS is never emitted.
Candidate decode_greedy(const SeqModel& model, std::span<const std::string> x);

// Length-synchronous beam search; finished hypotheses stay in the pool unchanged.
// Sorted by total_logp descending, ties by lexicographic token ids.
std::vector<Candidate> decode_beam(const SeqModel& model, std::span<const std::string> x, std::size_t width);

// `groups` groups of width 1 with Hamming diversity: at each step group g's
// log-probabilities are reduced by penalty * (times the token was chosen by
// groups < g at this step).
std::vector<Candidate> decode_diverse_beam(const SeqModel& model, std::span<const std::string> x,
                                           std::size_t groups, double diversity_penalty);

// Samples from the smallest top-probability set with mass >= p (BOS excluded).
Candidate decode_nucleus(const SeqModel& model, std::span<const std::string> x, double p, RngSeed seed);

// ---------------------------------------------------------------------------
// Serialization: "SQM1", V, dim, ngram_order, max_len as u32 LE, then V
// length-prefixed (u32) UTF-8 tokens, then V*dim f64 LE row-major.

void save_seq_model(std::ostream& out, const SeqModel& model);
void save_seq_model(const std::filesystem::path& path, const SeqModel& model);
SeqModel load_seq_model(std::istream& in);
SeqModel load_seq_model(const std::filesystem::path& path);

// One JSON object per set: {"input", "candidates": [{tokens, token_logps, total_logp, pref_score?}]}.
void write_candidate_sets(std::ostream& out, const Vocab& vocab, std::span<const CandidateSet> sets);

}  // namespace dpm
