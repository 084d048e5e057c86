#include <gtest/gtest.h>

#include <sstream>

#include "dpm/dataset_io.hpp"

using namespace dpm;

namespace {

Dataset parse(const std::string& text, DatasetReadOptions opt = {}) {
  std::istringstream in(text);
  return read_dataset(in, opt);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(DatasetIo, ReadsAnnotationsAndPriors) {
  const auto ds = parse(
      R"({"id":"a","context":"hi there","text":"ok","annotations":[0,0,1]})"
      "\n\n"
      R"({"id":"b","context":"","text":"no way","prior":[0.25,0.75],"extra":1})"
      "\n");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].context, (TokenSeq{"hi", "there"}));
  EXPECT_NEAR(ds[0].prior[0], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(ds[0].raw_annotations, (std::vector<int>{0, 0, 1}));
  EXPECT_FALSE(ds[1].raw_annotations.has_value());
  EXPECT_TRUE(ds[1].context.empty());
  EXPECT_EQ(ds[1].prior, PrefDist({0.25, 0.75}));
}

TEST(DatasetIo, EpsilonSmoothing) {
  DatasetReadOptions opt;
  opt.epsilon = 1.0;
  const auto ds = parse(R"({"id":"a","context":"","text":"x","annotations":[0]})", opt);
  EXPECT_NEAR(ds[0].prior[0], 2.0 / 3.0, 1e-15);
}

TEST(DatasetIo, ErrorsNameTheLine) {
  EXPECT_NE(error_of("{\"id\":\"a\",\"context\":\"\",\"text\":\"x\",\"annotations\":[0]}\n{bad json}\n").find("line 2"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"id":"a","context":"","text":"x"})").find("line 1"), std::string::npos);
  EXPECT_NE(error_of(R"({"id":"a","context":"","text":"x","annotations":[0],"prior":[1,0]})").find("line 1"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"id":"a","context":"","text":"x","prior":[0.5,0.6]})").find("line 1"), std::string::npos);
  EXPECT_NE(error_of(R"({"id":"a","context":"","text":"x","annotations":[3]})").find("line 1"), std::string::npos);
  EXPECT_NE(error_of(R"({"context":"","text":"x","annotations":[0]})").find("line 1"), std::string::npos);
}

TEST(DatasetIo, DuplicateIdsRejected) {
  EXPECT_THROW(parse("{\"id\":\"a\",\"context\":\"\",\"text\":\"x\",\"annotations\":[0]}\n"
                     "{\"id\":\"a\",\"context\":\"\",\"text\":\"y\",\"annotations\":[1]}\n"),
               Error);
}

TEST(DatasetIo, RoundTrip) {
  const auto ds = parse(
      R"({"id":"a","context":"c1 c2","text":"t1","annotations":[1,0,1]})"
      "\n"
      R"({"id":"b","context":"c3","text":"t2 t3","prior":[0.125,0.875]})"
      "\n");
  std::stringstream buf;
  write_dataset(buf, ds);
  const auto back = read_dataset(buf);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].id, ds[i].id);
    EXPECT_EQ(back[i].context, ds[i].context);
    EXPECT_EQ(back[i].text, ds[i].text);
    EXPECT_EQ(back[i].prior, ds[i].prior);
    EXPECT_EQ(back[i].raw_annotations, ds[i].raw_annotations);
  }
}

TEST(DatasetIo, MissingFileIsIoError) {
  EXPECT_THROW(read_dataset(std::filesystem::path("/nonexistent/dir/data.jsonl")), IoError);
}
