#include <gtest/gtest.h>

#include <sstream>

#include "dpm/ingest.hpp"

using namespace dpm;

TEST(MiCodes, PaperExamplesAndPartition) {
  EXPECT_EQ(map_mi_code("Affirm"), 0);
  EXPECT_EQ(map_mi_code("Advise without Permission"), 1);
  EXPECT_EQ(map_mi_code("Open Question"), 0);
  int acceptable = 0, unacceptable = 0;
  for (auto code : kMiCodes) (map_mi_code(code) == 0 ? acceptable : unacceptable)++;
  EXPECT_EQ(acceptable, 11);
  EXPECT_EQ(unacceptable, 4);
  for (auto code : {"Confront", "Direct", "Warn"}) EXPECT_EQ(map_mi_code(code), 1);
  try {
    map_mi_code("Shout");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("Shout"), std::string::npos);
  }
}

TEST(MiToItem, Composition) {
  const auto it = mi_to_item({"how are you", "fine", {"Affirm", "Support", "Direct"}}, "x");
  EXPECT_EQ(it.raw_annotations, (std::vector<int>{0, 0, 1}));
  EXPECT_NEAR(it.prior[0], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(mi_to_item({"", "ok", {"Affirm", "Other"}}, "y").prior, PrefDist({1.0, 0.0}));
  EXPECT_EQ(mi_to_item({"", "ok", {"Warn"}}, "z").prior, PrefDist({0.0, 1.0}));
  EXPECT_THROW(mi_to_item({"", "ok", {}}, "w"), Error);
}

TEST(Consensus, BracketsAndDeterminism) {
  EXPECT_EQ(consensus_bracket(1), std::make_pair(0.0, 0.01));
  EXPECT_EQ(consensus_bracket(4), std::make_pair(0.75, 0.90));
  EXPECT_THROW(consensus_bracket(0), Error);
  EXPECT_THROW(consensus_bracket(6), Error);
  for (int scale = 1; scale <= 5; ++scale) {
    const auto [lo, hi] = consensus_bracket(scale);
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto it = consensus_to_item({"c", "t", scale}, "id", RngSeed{s});
      EXPECT_GE(it.prior[0], lo);
      EXPECT_LE(it.prior[0], hi);
      EXPECT_FALSE(it.raw_annotations.has_value());
    }
  }
  EXPECT_EQ(consensus_to_item({"c", "t", 3}, "a", RngSeed{9}).prior, consensus_to_item({"c", "t", 3}, "a", RngSeed{9}).prior);
}

TEST(Readers, ParseAndConvert) {
  std::istringstream mi(R"({"context":"hi","text":"hello","codes":["Affirm","Warn"]})"
                        "\n"
                        R"({"context":"","text":"bye","codes":["Support"]})"
                        "\n");
  const auto ds = convert_mi(read_mi_records(mi));
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].id, "mi-1");
  EXPECT_EQ(ds[1].prior, PrefDist({1.0, 0.0}));

  std::istringstream cons(R"({"context":"a","text":"b","scale":2})"
                          "\n"
                          R"({"context":"a","text":"c","scale":5})"
                          "\n");
  const auto recs = read_consensus_records(cons);
  const auto d1 = convert_consensus(recs, RngSeed{3});
  const auto d2 = convert_consensus(recs, RngSeed{3});
  EXPECT_EQ(d1[0].prior, d2[0].prior);
  EXPECT_EQ(d1[1].id, "mic-2");
  EXPECT_GE(d1[1].prior[0], 0.99);

  std::istringstream bad(R"({"context":"a","text":"b","scale":"x"})");
  try {
    read_consensus_records(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::istringstream unknown(R"({"context":"a","text":"b","codes":["Nope"]})");
  EXPECT_THROW(convert_mi(read_mi_records(unknown)), Error);
}

TEST(Truth, RoundTrip) {
  SimulationConfig cfg;
  cfg.n_items = 5;
  cfg.dim = 256;
  const auto sim = simulate_annotators(cfg);
  std::stringstream buf;
  write_truth(buf, sim.dataset, sim.truth);
  const auto back = read_truth(buf);
  EXPECT_EQ(back, sim.truth);
}

TEST(Simulator, DeterministicAndWellFormed) {
  SimulationConfig cfg;
  cfg.n_items = 50;
  cfg.dim = 1024;
  cfg.seed = RngSeed{4};
  const auto a = simulate_annotators(cfg);
  const auto b = simulate_annotators(cfg);
  ASSERT_EQ(a.dataset.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.dataset[i].text, b.dataset[i].text);
    EXPECT_EQ(a.dataset[i].raw_annotations, b.dataset[i].raw_annotations);
    EXPECT_EQ(a.dataset[i].text.size(), cfg.text_layers);
    EXPECT_EQ(a.dataset[i].raw_annotations->size(), 3u);
    // rho* is exactly what the planted scorer outputs.
    EXPECT_EQ(a.truth.at(a.dataset[i].id), score(a.planted, a.dataset[i].context, a.dataset[i].text));
  }
  EXPECT_EQ(a.planted, b.planted);
}

TEST(Simulator, SingleAnnotatorPriorsAreOneHot) {
  SimulationConfig cfg;
  cfg.n_items = 40;
  cfg.n_annotators = 1;
  cfg.dim = 512;
  const auto sim = simulate_annotators(cfg);
  for (const auto& it : sim.dataset.items()) EXPECT_TRUE(it.prior[0] == 1.0 || it.prior[0] == 0.0);
}

TEST(Simulator, ManyAnnotatorsRecoverTruth) {
  SimulationConfig cfg;
  cfg.n_items = 40;
  cfg.n_annotators = 1000;
  cfg.dim = 512;
  const auto sim = simulate_annotators(cfg);
  double gap = 0.0;
  for (const auto& it : sim.dataset.items()) gap += std::abs(it.prior[0] - sim.truth.at(it.id)[0]);
  EXPECT_LT(gap / 40.0, 0.05);
}

TEST(Simulator, RejectsEmptyShapes) {
  SimulationConfig cfg;
  cfg.n_items = 0;
  EXPECT_THROW(simulate_annotators(cfg), Error);
}
