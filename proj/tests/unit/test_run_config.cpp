#include <gtest/gtest.h>

#include <sstream>

#include "dpm/run_config.hpp"

using namespace dpm;

namespace {

RunConfig parse(const std::string& s) {
  std::istringstream in(s);
  return RunConfig::parse(in);
}

}  // namespace

TEST(RunConfig, ParsesValuesCommentsAndLists) {
  const auto cfg = parse("# header\nseed = 42\nlr=0.25  # inline\n\nks = 5, 10,15\nkind = soft\nnll_weight = 0.5\n");
  EXPECT_EQ(cfg.seed().value, 42u);
  EXPECT_DOUBLE_EQ(cfg.train_config().lr, 0.25);
  EXPECT_EQ(cfg.unsigned_list("ks", {}), (std::vector<std::uint64_t>{5, 10, 15}));
  EXPECT_EQ(cfg.string("kind", "dpm"), "soft");
  EXPECT_EQ(cfg.calib_config().reference_weight(), 0.5);
  EXPECT_EQ(cfg.train_config().seed.value, 42u);
}

TEST(RunConfig, DefaultsWhenUnset) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.train_config().max_epochs, TrainConfig{}.max_epochs);
  EXPECT_EQ(cfg.calib_config().k, CalibConfig{}.k);
  EXPECT_FALSE(cfg.calib_config().nll_weight.has_value());
  EXPECT_EQ(cfg.unsigned_list("seeds", kDefaultSeeds), (std::vector<std::uint64_t>{0, 1, 13, 42, 1024}));
}

TEST(RunConfig, RejectsUnknownKeysByName) {
  try {
    parse("seed = 1\nlearning_rate = 3\n");
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("learning_rate"), std::string::npos);
    EXPECT_NE(msg.find("line 2"), std::string::npos);
  }
  RunConfig cfg;
  EXPECT_THROW(cfg.set("bogus", "1"), Error);
}

TEST(RunConfig, RejectsMalformedValues) {
  EXPECT_THROW(parse("seed = -1\n"), Error);
  EXPECT_THROW(parse("lr = fast\n"), Error);
  EXPECT_THROW(parse("ks = 5,x\n"), Error);
  EXPECT_THROW(parse("just a line\n"), Error);
  EXPECT_THROW(parse("kind =\n"), Error);
}

TEST(RunConfig, LaterSetOverrides) {
  auto cfg = parse("margin = 0.1\n");
  cfg.set("margin", "0.2");
  EXPECT_DOUBLE_EQ(cfg.calib_config().margin, 0.2);
}

TEST(RunConfig, MissingFileIsIoError) { EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg"), IoError); }
