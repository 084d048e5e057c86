#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "dpm/seqgen.hpp"
#include "test_support.hpp"

using namespace dpm;
using dpm::test::brute_logp;
using dpm::test::enumerate_sequences;
using dpm::test::random_model;

namespace {

const TokenSeq kInput{"how", "are", "you"};

void expect_self_consistent(const SeqModel& model, std::span<const std::string> x, const Candidate& c) {
  ASSERT_EQ(c.tokens.front(), kBos);
  ASSERT_EQ(c.token_logps.size() + 1, c.tokens.size());
  double total = 0.0;
  for (std::size_t t = 1; t < c.tokens.size(); ++t) {
    const auto p = next_token_dist(model, x, std::span<const TokenId>(c.tokens.data(), t));
    EXPECT_NEAR(c.token_logps[t - 1], std::log(p[c.tokens[t]]), 1e-9);
    total += c.token_logps[t - 1];
  }
  EXPECT_NEAR(c.total_logp, total, 1e-9);
}

}  // namespace

TEST(Vocab, ReservedIdsAndErrors) {
  const Vocab v = Vocab::from_content(TokenSeq{"a", "b", "a"});
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(kBos), "<s>");
  EXPECT_EQ(v.token(kEos), "</s>");
  EXPECT_EQ(v.id("b"), 3u);
  EXPECT_FALSE(v.find("zzz").has_value());
  EXPECT_THROW(v.id("zzz"), Error);
  EXPECT_THROW(Vocab(std::vector<std::string>{"a", "b"}), Error);
  EXPECT_THROW(Vocab(std::vector<std::string>{"<s>", "</s>", "x", "x"}), Error);
}

TEST(NextTokenDist, UniformAtZeroWeights) {
  const SeqModel m(test::small_vocab(4), 32);
  const auto p = next_token_dist(m, kInput, TokenSeq{"<s>"});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 6.0);
  EXPECT_THROW(next_token_dist(m, kInput, TokenSeq{"t0"}), Error);
  EXPECT_THROW(next_token_dist(m, kInput, TokenSeq{"<s>", "nope"}), Error);
}

TEST(NextTokenDist, SumsToOne) {
  Rng rng(RngSeed{7});
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_model(rng, 5, 64, 2.0, 6);
    std::vector<TokenId> prefix{kBos};
    for (std::size_t t = 0; t < rng.index(4); ++t) prefix.push_back(static_cast<TokenId>(1 + rng.index(6)));
    const auto p = next_token_dist(m, kInput, prefix);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(NextTokenDist, MatchesIndependentGolden) {
  std::ifstream in(std::string(DPM_TEST_DATA_DIR) + "/golden_features.json");
  const auto golden = nlohmann::json::parse(in)["next_token"];
  const Vocab vocab(golden["vocab"].get<std::vector<std::string>>());
  const auto dim = golden["dim"].get<std::uint32_t>();
  Matrix w(vocab.size(), dim);
  for (std::size_t v = 0; v < vocab.size(); ++v)
    for (std::size_t j = 0; j < dim; ++j) w(v, j) = static_cast<double>(static_cast<long>((v * 7 + j * 13) % 17) - 8) / 8.0;
  const SeqModel m(vocab, w, golden["ngram_order"].get<std::uint32_t>());
  const auto x = golden["x"].get<TokenSeq>();
  const auto prefixes = golden["prefixes"].get<std::vector<TokenSeq>>();
  const auto expected = golden["expected"].get<std::vector<std::vector<double>>>();
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    const auto p = next_token_dist(m, x, prefixes[i]);
    for (std::size_t v = 0; v < p.size(); ++v) EXPECT_NEAR(p[v], expected[i][v], 1e-12);
  }
}

TEST(Nll, UniformModelIsLogV) {
  const SeqModel m(test::small_vocab(3), 32);
  const std::vector<SeqPair> pairs{make_seq_pair(kInput, TokenSeq{"t0", "t2"}), make_seq_pair({}, {})};
  EXPECT_NEAR(nll_loss_and_grad(m, pairs).loss, std::log(5.0), 1e-12);
}

TEST(Nll, GradientMatchesFiniteDifferences) {
  Rng rng(RngSeed{17});
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_model(rng, 3, 16, 0.8, 6);
    std::vector<SeqPair> pairs;
    for (int i = 0; i < 3; ++i)
      pairs.push_back(make_seq_pair(test::random_tokens(rng, 2, 3, "c"), test::random_tokens(rng, 1 + rng.index(3), 3, "t")));
    const auto lg = nll_loss_and_grad(m, pairs);
    EXPECT_LT(test::fd_relative_error(m.weights(), [&] { return nll_loss_and_grad(m, pairs).loss; }, lg.grad), 1e-4);
  }
}

TEST(Nll, DuplicatePairKeepsMean) {
  Rng rng(RngSeed{18});
  const auto m = random_model(rng, 3, 16, 0.8, 6);
  const auto p = make_seq_pair(kInput, TokenSeq{"t1", "t1"});
  const std::vector<SeqPair> one{p}, two{p, p};
  EXPECT_NEAR(nll_loss_and_grad(m, one).loss, nll_loss_and_grad(m, two).loss, 1e-14);
  EXPECT_THROW(nll_loss_and_grad(m, std::vector<SeqPair>{}), Error);
  EXPECT_THROW(nll_loss_and_grad(m, std::vector<SeqPair>{SeqPair{kInput, {"t1"}}}), Error);
}

TEST(TrainGenerator, LossDecreases) {
  const std::vector<SeqPair> pairs{make_seq_pair({"a"}, {"t0", "t1"}), make_seq_pair({"b"}, {"t2"})};
  GenTrainConfig cfg;
  cfg.dim = 128;
  cfg.steps = 100;
  const auto res = train_generator(test::small_vocab(3), pairs, cfg);
  EXPECT_LT(res.loss_trace.back(), res.loss_trace.front());
  EXPECT_EQ(candidate_body(res.model.vocab(), decode_greedy(res.model, TokenSeq{"a"})), (TokenSeq{"t0", "t1"}));
}

TEST(Greedy, OverwhelmingEosBias) {
  SeqModel m(test::small_vocab(3), 16);
  m.weights()(kEos, 0) = 50.0;
  const auto c = decode_greedy(m, kInput);
  EXPECT_EQ(c.tokens, (std::vector<TokenId>{kBos, kEos}));
  EXPECT_TRUE(candidate_body(m.vocab(), c).empty());
}

TEST(Greedy, MatchesStepwiseArgmaxAndNeverEmitsBos) {
  Rng rng(RngSeed{41});
  for (int trial = 0; trial < 30; ++trial) {
    auto m = random_model(rng, 1, 32, 1.5, 4);
    m.weights()(kBos, 0) = 4.0;  // BOS dominates the softmax but must never be decoded
    const auto c = decode_greedy(m, kInput);
    expect_self_consistent(m, kInput, c);
    std::vector<TokenId> prefix{kBos};
    while (prefix.size() - 1 < m.max_len() && prefix.back() != kEos) {
      const auto p = next_token_dist(m, kInput, prefix);
      TokenId best = kEos;
      for (TokenId v = kEos; v < p.size(); ++v)
        if (p[v] > p[best]) best = v;
      prefix.push_back(best);
    }
    EXPECT_EQ(c.tokens, prefix);
    EXPECT_EQ(c, decode_greedy(m, kInput)) << "non-deterministic";
  }
}

TEST(Beam, WidthOneIsGreedy) {
  Rng rng(RngSeed{42});
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_model(rng, 1 + rng.index(3), 32, 1.5, 1 + rng.index(5));
    const auto beam = decode_beam(m, kInput, 1);
    ASSERT_EQ(beam.size(), 1u);
    EXPECT_EQ(beam[0].tokens, decode_greedy(m, kInput).tokens);
  }
}

TEST(Beam, ExhaustiveWidthFindsGlobalOptimum) {
  Rng rng(RngSeed{43});
  for (std::size_t content = 1; content <= 2; ++content) {
    for (std::uint32_t len = 1; len <= 3; ++len) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_model(rng, content, 32, 1.5, len);
        double best = -INFINITY;
        std::vector<TokenId> prefix{kBos};
        std::size_t count = 0;
        enumerate_sequences(m, prefix, [&](const std::vector<TokenId>& s) {
          best = std::max(best, brute_logp(m, kInput, s));
          ++count;
        });
        const auto beam = decode_beam(m, kInput, count);
        EXPECT_NEAR(beam.front().total_logp, best, 1e-9);
        EXPECT_EQ(beam.size(), count);
        for (std::size_t i = 1; i < beam.size(); ++i) EXPECT_GE(beam[i - 1].total_logp, beam[i].total_logp);
        for (const auto& c : beam) expect_self_consistent(m, kInput, c);
      }
    }
  }
}

TEST(Beam, TieBreakIsLexicographic) {
  // Zero weights: every continuation ties, so order is decided by token ids.
  const SeqModel m(test::small_vocab(2), 16, 2, 2);
  const auto beam = decode_beam(m, kInput, 20);
  for (std::size_t i = 1; i < beam.size(); ++i) {
    if (beam[i - 1].total_logp == beam[i].total_logp) EXPECT_LT(beam[i - 1].tokens, beam[i].tokens);
  }
  EXPECT_THROW(decode_beam(m, kInput, 0), Error);
}

TEST(DiverseBeam, ZeroPenaltyReplicatesGreedy) {
  Rng rng(RngSeed{44});
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng, 3, 32, 1.5, 5);
    const auto g = decode_greedy(m, kInput);
    const auto out = decode_diverse_beam(m, kInput, 4, 0.0);
    ASSERT_EQ(out.size(), 4u);
    for (const auto& c : out) {
      EXPECT_EQ(c.tokens, g.tokens);
      EXPECT_EQ(c.token_logps, g.token_logps);
    }
    EXPECT_EQ(decode_diverse_beam(m, kInput, 1, 0.5)[0].tokens, g.tokens);
  }
}

TEST(DiverseBeam, PenaltyProducesDistinctSequences) {
  // Near-uniform model: a 0.5 penalty always pushes later groups off earlier choices.
  Rng rng(RngSeed{45});
  const auto m = random_model(rng, 4, 32, 0.05, 4);
  const auto out = decode_diverse_beam(m, kInput, 4, 0.5);
  std::set<std::vector<TokenId>> distinct;
  for (const auto& c : out) {
    distinct.insert(c.tokens);
    expect_self_consistent(m, kInput, c);
  }
  EXPECT_GE(distinct.size(), 2u);
}

TEST(Nucleus, TinyPIsGreedyAndSeedsAreDeterministic) {
  Rng rng(RngSeed{46});
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng, 3, 32, 1.5, 5);
    EXPECT_EQ(decode_nucleus(m, kInput, 1e-9, RngSeed{static_cast<std::uint64_t>(trial)}).tokens,
              decode_greedy(m, kInput).tokens);
    const auto a = decode_nucleus(m, kInput, 0.9, RngSeed{3});
    EXPECT_EQ(a, decode_nucleus(m, kInput, 0.9, RngSeed{3}));
    expect_self_consistent(m, kInput, a);
  }
  EXPECT_THROW(decode_nucleus(SeqModel(test::small_vocab(2), 16), kInput, 0.0, RngSeed{}), Error);
}

TEST(Nucleus, DifferentSeedsDiffer) {
  Rng rng(RngSeed{47});
  const auto m = random_model(rng, 4, 32, 0.05, 4);
  std::set<std::vector<TokenId>> seen;
  for (std::uint64_t s = 0; s < 10; ++s) seen.insert(decode_nucleus(m, kInput, 1.0, RngSeed{s}).tokens);
  EXPECT_GE(seen.size(), 2u);
}

TEST(Nucleus, FullMassMatchesAncestralFrequencies) {
  // One step then forced stop: P(first token) must follow the model.
  Rng rng(RngSeed{48});
  const auto m = random_model(rng, 2, 32, 1.0, 1);
  const auto p = next_token_dist(m, kInput, std::vector<TokenId>{kBos});
  const double nonbos = 1.0 - p[kBos];
  std::vector<double> counts(m.vocab().size(), 0.0);
  const int draws = 20000;
  for (int s = 0; s < draws; ++s) counts[decode_nucleus(m, kInput, 1.0, RngSeed{static_cast<std::uint64_t>(s)}).tokens[1]] += 1;
  for (TokenId v = kEos; v < m.vocab().size(); ++v) EXPECT_NEAR(counts[v] / draws, p[v] / nonbos, 0.015);
}

TEST(SeqModelIo, RoundTrip) {
  Rng rng(RngSeed{49});
  const auto m = random_model(rng, 3, 32, 1.0, 7, 3);
  std::stringstream buf;
  save_seq_model(buf, m);
  EXPECT_EQ(load_seq_model(buf), m);
  std::stringstream bad("nope");
  EXPECT_THROW(load_seq_model(bad), Error);
}

TEST(CandidateJson, WritesOneLinePerSet) {
  const SeqModel m(test::small_vocab(2), 16, 2, 3);
  std::vector<CandidateSet> sets{{kInput, decode_beam(m, kInput, 2)}, {{}, {decode_greedy(m, {})}}};
  std::ostringstream out;
  write_candidate_sets(out, m.vocab(), sets);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("input"));
    for (const auto& c : j["candidates"]) {
      EXPECT_TRUE(c.contains("tokens"));
      EXPECT_EQ(c["token_logps"].size() + 1, c["tokens"].size());
    }
    ++n;
  }
  EXPECT_EQ(n, 2);
}
