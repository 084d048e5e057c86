#include <algorithm>
#include <numeric>

#include "dpm/seqgen.hpp"

namespace dpm {

TokenSeq candidate_body(const Vocab& vocab, const Candidate& c) {
  TokenSeq out;
  for (std::size_t i = 1; i < c.tokens.size(); ++i) {
    if (i + 1 == c.tokens.size() && c.tokens[i] == kEos) break;
    out.push_back(vocab.token(c.tokens[i]));
  }
  return out;
}

TokenSeq candidate_tokens(const Vocab& vocab, const Candidate& c) {
  TokenSeq out;
  for (TokenId id : c.tokens) out.push_back(vocab.token(id));
  return out;
}

namespace {

// Argmax over every token except BOS; lowest id wins ties.
TokenId argmax_token(std::span<const double> scores) {
  TokenId best = kEos;
  for (TokenId v = kEos + 1; v < scores.size(); ++v)
    if (scores[v] > scores[best]) best = v;
  return best;
}

void append(Candidate& c, TokenId token, double logp) {
  c.tokens.push_back(token);
  c.token_logps.push_back(logp);
  c.total_logp += logp;
}

Candidate start_candidate() {
  Candidate c;
  c.tokens.push_back(kBos);
  return c;
}

// Higher total first, then lexicographically smaller token ids.
bool beam_order(const Candidate& a, const Candidate& b) {
  if (a.total_logp != b.total_logp) return a.total_logp > b.total_logp;
  return a.tokens < b.tokens;
}

}  // namespace

Candidate decode_greedy(const SeqModel& model, std::span<const std::string> x) {
  Candidate c = start_candidate();
  while (c.length() < model.max_len() && !c.finished()) {
    const auto p = next_token_dist(model, x, c.tokens);
    const TokenId tok = argmax_token(p);
    append(c, tok, clamped_log(p[tok]));
  }
  return c;
}

std::vector<Candidate> decode_beam(const SeqModel& model, std::span<const std::string> x, std::size_t width) {
  if (width == 0) throw Error("decode_beam: width must be >= 1");
  std::vector<Candidate> beam{start_candidate()};
  for (std::uint32_t step = 0; step < model.max_len(); ++step) {
    if (std::all_of(beam.begin(), beam.end(), [](const Candidate& c) { return c.finished(); })) break;
    std::vector<Candidate> pool;
    for (const auto& hyp : beam) {
      if (hyp.finished()) {
        pool.push_back(hyp);
        continue;
      }
      const auto p = next_token_dist(model, x, hyp.tokens);
      for (TokenId v = kEos; v < p.size(); ++v) {
        Candidate next = hyp;
        append(next, v, clamped_log(p[v]));
        pool.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(), beam_order);
    pool.resize(keep);
    beam = std::move(pool);
  }
  std::sort(beam.begin(), beam.end(), beam_order);
  for (std::size_t i = 0; i < beam.size(); ++i) beam[i].decode_index = i;
  return beam;
}

std::vector<Candidate> decode_diverse_beam(const SeqModel& model, std::span<const std::string> x,
                                           std::size_t groups, double diversity_penalty) {
  if (groups == 0) throw Error("decode_diverse_beam: need at least one group");
  if (!(diversity_penalty >= 0.0)) throw Error("decode_diverse_beam: penalty must be >= 0");
  std::vector<Candidate> out(groups, start_candidate());
  std::vector<double> chosen(model.vocab().size());
  std::vector<double> scores(model.vocab().size());
  for (std::uint32_t step = 0; step < model.max_len(); ++step) {
    std::fill(chosen.begin(), chosen.end(), 0.0);
    bool any_live = false;
    for (auto& c : out) {
      if (c.finished()) continue;
      any_live = true;
      const auto p = next_token_dist(model, x, c.tokens);
      for (std::size_t v = 0; v < p.size(); ++v) scores[v] = clamped_log(p[v]) - diversity_penalty * chosen[v];
      const TokenId tok = argmax_token(scores);
      append(c, tok, clamped_log(p[tok]));
      chosen[tok] += 1.0;
    }
    if (!any_live) break;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].decode_index = i;
  return out;
}

Candidate decode_nucleus(const SeqModel& model, std::span<const std::string> x, double p, RngSeed seed) {
  if (!(p > 0.0 && p <= 1.0)) throw Error("decode_nucleus: p must be in (0, 1]");
  Rng rng(seed);
  Candidate c = start_candidate();
  std::vector<TokenId> order(model.vocab().size() - 1);
  while (c.length() < model.max_len() && !c.finished()) {
    const auto dist = next_token_dist(model, x, c.tokens);
    std::iota(order.begin(), order.end(), kEos);
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return dist[a] > dist[b]; });
    double mass = 0.0;
    for (TokenId v : order) mass += dist[v];
    const double threshold = p * mass;
    std::vector<double> weights;
    double cum = 0.0;
    for (TokenId v : order) {
      weights.push_back(dist[v]);
      cum += dist[v];
      if (cum >= threshold) break;
    }
    const TokenId tok = order[rng.categorical(weights)];
    append(c, tok, clamped_log(dist[tok]));
  }
  return c;
}

}  // namespace dpm
