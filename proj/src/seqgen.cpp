#include "dpm/seqgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

#include "binary_io.hpp"
#include "dpm/dataset_io.hpp"

namespace dpm {

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[kBos] != kBosToken || tokens_[kEos] != kEosToken)
    throw Error("vocab must start with <s>, </s>");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw Error("vocab: empty token");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw Error("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

Vocab Vocab::from_content(std::span<const std::string> content) {
  std::vector<std::string> all{std::string(kBosToken), std::string(kEosToken)};
  std::unordered_set<std::string_view> seen{kBosToken, kEosToken};
  for (const auto& tok : content)
    if (seen.insert(tok).second) all.push_back(tok);
  return Vocab(std::move(all));
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw Error("unknown token '" + std::string(token) + "'");
}

std::vector<TokenId> Vocab::ids(std::span<const std::string> tokens) const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

// ---------------------------------------------------------------------------
// SeqModel

SeqModel::SeqModel(Vocab vocab, std::uint32_t dim, std::uint32_t ngram_order, std::uint32_t max_len)
    : SeqModel(vocab, Matrix(vocab.size(), dim), ngram_order, max_len) {}

SeqModel::SeqModel(Vocab vocab, Matrix weights, std::uint32_t ngram_order, std::uint32_t max_len)
    : vocab_(std::move(vocab)), weights_(std::move(weights)), ngram_order_(ngram_order), max_len_(max_len) {
  if (weights_.rows() != vocab_.size()) throw Error("SeqModel: weight rows must equal vocab size");
  if (weights_.cols() < 2) throw Error("SeqModel: dim must be >= 2");
  if (ngram_order_ < 1) throw Error("SeqModel: ngram_order must be >= 1");
  if (max_len_ < 1) throw Error("SeqModel: max_len must be >= 1");
}

void SeqModel::set_max_len(std::uint32_t max_len) {
  if (max_len < 1) throw Error("SeqModel: max_len must be >= 1");
  max_len_ = max_len;
}

FeatureVector step_features(const SeqModel& model, std::span<const std::string> x, std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix.front() != kBos) throw Error("prefix must begin with <s>");
  const std::size_t n = std::min<std::size_t>(model.ngram_order(), prefix.size());
  std::vector<std::string_view> window;
  window.reserve(n);
  for (std::size_t i = prefix.size() - n; i < prefix.size(); ++i) {
    if (prefix[i] >= model.vocab().size()) throw Error("token id out of range");
    window.push_back(model.vocab().token(prefix[i]));
  }
  std::vector<std::string_view> xv(x.begin(), x.end());
  return featurize(std::span<const std::string_view>(xv), std::span<const std::string_view>(window),
                   model.dim());
}

namespace {

std::vector<double> dist_from_features(const SeqModel& model, const FeatureVector& f) {
  std::vector<double> z(model.vocab().size());
  for (std::size_t v = 0; v < z.size(); ++v) z[v] = sparse_dot(model.weights().row(v), f);
  softmax_inplace(z);
  return z;
}

}  // namespace

std::vector<double> next_token_dist(const SeqModel& model, std::span<const std::string> x,
                                    std::span<const TokenId> prefix) {
  return dist_from_features(model, step_features(model, x, prefix));
}

std::vector<double> next_token_dist(const SeqModel& model, std::span<const std::string> x,
                                    std::span<const std::string> prefix) {
  const auto ids = model.vocab().ids(prefix);
  return next_token_dist(model, x, ids);
}

SeqPair make_seq_pair(TokenSeq x, TokenSeq body) {
  body.emplace_back(kEosToken);
  return SeqPair{std::move(x), std::move(body)};
}

TeacherForced teacher_force(const SeqModel& model, std::span<const std::string> x, std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens.front() != kBos) throw Error("sequence must begin with <s>");
  TeacherForced out;
  out.steps.reserve(tokens.size() - 1);
  out.targets.reserve(tokens.size() - 1);
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    out.steps.push_back(step_features(model, x, tokens.first(t)));
    if (tokens[t] >= model.vocab().size()) throw Error("token id out of range");
    out.targets.push_back(tokens[t]);
  }
  return out;
}

double sequence_logp(const SeqModel& model, const TeacherForced& seq, double coeff, Matrix* grad,
                     std::vector<double>* token_logps) {
  double total = 0.0;
  if (token_logps) token_logps->clear();
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const auto p = dist_from_features(model, seq.steps[t]);
    const double lp = clamped_log(p[seq.targets[t]]);
    total += lp;
    if (token_logps) token_logps->push_back(lp);
    if (grad && coeff != 0.0) {
      // d log p_y / d W[v] = (1[v == y] - p_v) f
      for (std::size_t v = 0; v < p.size(); ++v) {
        const double g = coeff * ((v == seq.targets[t] ? 1.0 : 0.0) - p[v]);
        if (g != 0.0) sparse_axpy(grad->row(v), seq.steps[t], g);
      }
    }
  }
  return total;
}

SequenceForward forward_sequence(const SeqModel& model, const TeacherForced& seq) {
  const std::size_t V = model.vocab().size();
  SequenceForward out;
  out.probs.resize(seq.length() * V);
  for (std::size_t t = 0; t < seq.length(); ++t) {
    double* z = out.probs.data() + t * V;
    for (std::size_t v = 0; v < V; ++v) z[v] = sparse_dot(model.weights().row(v), seq.steps[t]);
    softmax_inplace(std::span<double>(z, V));
    out.logp += clamped_log(z[seq.targets[t]]);
  }
  return out;
}

void add_logp_grad(const SeqModel& model, const TeacherForced& seq, const SequenceForward& fwd, double coeff,
                   Matrix& grad) {
  if (coeff == 0.0) return;
  const std::size_t V = model.vocab().size();
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const double* p = fwd.probs.data() + t * V;
    for (std::size_t v = 0; v < V; ++v) {
      const double g = coeff * ((v == seq.targets[t] ? 1.0 : 0.0) - p[v]);
      if (g != 0.0) sparse_axpy(grad.row(v), seq.steps[t], g);
    }
  }
}

namespace {

TeacherForced teacher_force_pair(const SeqModel& model, const SeqPair& pair) {
  if (pair.y.empty() || pair.y.back() != kEosToken) throw Error("reference must be terminated by </s>");
  std::vector<TokenId> ids{kBos};
  for (const auto& t : pair.y) ids.push_back(model.vocab().id(t));
  return teacher_force(model, pair.x, ids);
}

LossAndGrad nll_over(const SeqModel& model, std::span<const TeacherForced> seqs) {
  LossAndGrad out{0.0, Matrix(model.vocab().size(), model.dim())};
  const double inv_n = 1.0 / static_cast<double>(seqs.size());
  for (const auto& seq : seqs) {
    const double w = inv_n / static_cast<double>(seq.length());
    out.loss -= w * sequence_logp(model, seq, -w, &out.grad);
  }
  return out;
}

}  // namespace

LossAndGrad nll_loss_and_grad(const SeqModel& model, std::span<const SeqPair> pairs) {
  if (pairs.empty()) throw Error("nll_loss: empty pair list");
  std::vector<TeacherForced> seqs;
  seqs.reserve(pairs.size());
  for (const auto& p : pairs) seqs.push_back(teacher_force_pair(model, p));
  return nll_over(model, seqs);
}

GenTrainResult train_generator(const Vocab& vocab, std::span<const SeqPair> pairs, const GenTrainConfig& config) {
  if (pairs.empty()) throw Error("train_generator: empty pair list");
  if (!(config.lr > 0.0) || config.steps < 0) throw Error("train_generator: invalid lr or steps");
  GenTrainResult result{SeqModel(vocab, config.dim, config.ngram_order, config.max_len), {}};
  std::vector<TeacherForced> seqs;
  seqs.reserve(pairs.size());
  for (const auto& p : pairs) seqs.push_back(teacher_force_pair(result.model, p));
  for (int step = 0; step < config.steps; ++step) {
    auto lg = nll_over(result.model, seqs);
    if (!std::isfinite(lg.loss)) throw Error("train_generator diverged at step " + std::to_string(step + 1));
    result.loss_trace.push_back(lg.loss);
    result.model.weights().add_scaled(lg.grad, -config.lr);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

void save_seq_model(std::ostream& out, const SeqModel& model) {
  out.write("SQM1", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(model.vocab().size()));
  detail::write_u32(out, model.dim());
  detail::write_u32(out, model.ngram_order());
  detail::write_u32(out, model.max_len());
  for (const auto& tok : model.vocab().tokens()) {
    detail::write_u32(out, static_cast<std::uint32_t>(tok.size()));
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  for (double w : model.weights().data()) detail::write_f64(out, w);
}

void save_seq_model(const std::filesystem::path& path, const SeqModel& model) {
  auto out = open_output(path, true);
  save_seq_model(out, model);
  if (!out) throw IoError("write failed: " + path.string());
}

SeqModel load_seq_model(std::istream& in) {
  detail::expect_magic(in, "SQM1");
  const std::uint32_t v = detail::read_u32(in);
  const std::uint32_t dim = detail::read_u32(in);
  const std::uint32_t order = detail::read_u32(in);
  const std::uint32_t max_len = detail::read_u32(in);
  if (v < 2 || v > (1u << 20) || dim < 2) throw Error("model file: invalid shape");
  std::vector<std::string> tokens(v);
  for (auto& tok : tokens) {
    const std::uint32_t len = detail::read_u32(in);
    if (len > (1u << 16)) throw Error("model file: token too long");
    tok.resize(len);
    if (!in.read(tok.data(), len)) throw Error("truncated binary file");
  }
  Matrix w(v, dim);
  for (double& x : w.data()) x = detail::read_f64(in);
  return SeqModel(Vocab(std::move(tokens)), std::move(w), order, max_len);
}

SeqModel load_seq_model(const std::filesystem::path& path) {
  auto in = open_input(path, true);
  try {
    return load_seq_model(in);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_candidate_sets(std::ostream& out, const Vocab& vocab, std::span<const CandidateSet> sets) {
  for (const auto& set : sets) {
    nlohmann::json obj;
    obj["input"] = join_tokens(set.input);
    auto& arr = obj["candidates"] = nlohmann::json::array();
    for (const auto& c : set.candidates) {
      nlohmann::json jc;
      jc["tokens"] = candidate_tokens(vocab, c);
      jc["token_logps"] = c.token_logps;
      jc["total_logp"] = c.total_logp;
      if (c.pref_score) jc["pref_score"] = *c.pref_score;
      arr.push_back(std::move(jc));
    }
    out << obj.dump() << '\n';
  }
}

}  // namespace dpm
