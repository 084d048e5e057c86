#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpm/commands.hpp"
#include "dpm/dataset_io.hpp"

using namespace dpm;
namespace fs = std::filesystem;

namespace {

Benchmark small_benchmark(std::uint64_t seed) {
  BenchmarkConfig cfg;
  cfg.simulation.n_items = 60;
  cfg.simulation.dim = 1024;
  cfg.simulation.seed = RngSeed{seed};
  cfg.preference.max_epochs = 30;
  cfg.generator.steps = 60;
  cfg.generator.dim = 512;
  return build_benchmark(cfg);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("dpm_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                  ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DPM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(PrefKind, ParseAndName) {
  for (const char* k : {"dpm", "major", "soft", "wo-agg"}) EXPECT_EQ(pref_kind_name(parse_pref_kind(k)), k);
  EXPECT_THROW(parse_pref_kind("median"), Error);
}

TEST(Eval, UniformScorerClosedFormAndMissingIds) {
  const Dataset ds({AnnotatedItem{"a", {}, {"x"}, PrefDist({1.0, 0.0}), std::nullopt}}, 2);
  SyntheticTruth truth{{"a", PrefDist({1.0, 0.0})}};
  const std::vector<NamedScorer> scorers{{"uniform", Scorer(2, 64)}};
  const auto rows = cmd_eval(scorers, truth, ds);
  EXPECT_NEAR(rows[0].mean_kl, std::log(2.0), 1e-15);
  EXPECT_EQ(rows[0].accuracy, 1.0);  // tie resolves to class 0

  const Dataset two({AnnotatedItem{"a", {}, {"x"}, PrefDist({1.0, 0.0}), std::nullopt},
                     AnnotatedItem{"zz", {}, {"y"}, PrefDist({1.0, 0.0}), std::nullopt}},
                    2);
  try {
    cmd_eval(scorers, truth, two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
}

TEST(Eval, PlantedScorerBeatsUniformAndIsDeterministic) {
  SimulationConfig cfg;
  cfg.n_items = 80;
  cfg.dim = 1024;
  const auto sim = simulate_annotators(cfg);
  const std::vector<NamedScorer> scorers{{"planted", sim.planted}, {"uniform", Scorer(2, 1024)}};
  const auto rows = cmd_eval(scorers, sim.truth, sim.dataset);
  EXPECT_NEAR(rows[0].mean_kl, 0.0, 1e-12);
  EXPECT_LT(rows[0].mean_kl, rows[1].mean_kl);
  std::ostringstream a, b;
  write_eval_csv(a, rows);
  write_eval_csv(b, cmd_eval(scorers, sim.truth, sim.dataset));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, a.str().find('\n')), "method,mean_kl,accuracy,top1_pref,spearman,spread");
}

TEST(Pipeline, SplitRules) {
  SimulationConfig cfg;
  cfg.n_items = 8;
  cfg.dim = 256;
  const auto sim = simulate_annotators(cfg);
  const auto data = split_pipeline_data(sim.dataset, 0.25);
  EXPECT_EQ(data.train.size(), 6u);
  EXPECT_EQ(data.heldout.size(), 2u);
  EXPECT_EQ(data.train[0].y.back(), "</s>");
  EXPECT_THROW(split_pipeline_data(sim.dataset, 0.0), Error);
  EXPECT_THROW(split_pipeline_data(sim.dataset, 0.01), Error);
}

TEST(SweepK, RowsShareBaseline) {
  const auto b = small_benchmark(1);
  CalibConfig cfg;
  cfg.steps = 5;
  const std::vector<std::size_t> ks{5, 10, 15, 20};
  const auto rows = cmd_sweep_k(ks, b.model, b.scorer, b.data, cfg);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.report.pre.spearman, rows[0].report.pre.spearman);
    EXPECT_EQ(r.report.pre.top1_pref, rows[0].report.pre.top1_pref);
  }
  const std::vector<std::size_t> one{7};
  EXPECT_EQ(cmd_sweep_k(one, b.model, b.scorer, b.data, cfg).size(), 1u);
  const std::vector<std::size_t> bad{1};
  EXPECT_THROW(cmd_sweep_k(bad, b.model, b.scorer, b.data, cfg), Error);
  std::ostringstream out;
  write_sweep_csv(out, rows);
  const std::string csv = out.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(CompareRl, TwoFiniteBlocks) {
  const auto b = small_benchmark(2);
  CalibConfig cfg;
  cfg.steps = 10;
  const auto blocks = cmd_compare_rl(b.model, b.scorer, b.data, cfg);
  ASSERT_EQ(blocks.size(), 2u);
  EXPECT_EQ(blocks[0].method, "contrastive");
  EXPECT_EQ(blocks[1].method, "reinforce");
  for (const auto& bl : blocks) {
    EXPECT_EQ(bl.report.loss_trace.size(), 10u);
    for (double l : bl.report.loss_trace) EXPECT_TRUE(std::isfinite(l));
  }
  std::ostringstream out;
  write_compare_csv(out, blocks);
  const std::string csv = out.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
}

TEST(EpochDump, HandExampleValues) {
  const Dataset ds({AnnotatedItem{"i1", {}, {"alpha"}, PrefDist({0.5, 0.5}), std::nullopt},
                    AnnotatedItem{"i2", {}, {"beta"}, PrefDist({0.5, 0.5}), std::nullopt}},
                   2);
  Scorer init(2, 64);
  init.weights()(0, featurize(TokenSeq{}, TokenSeq{"alpha"}, 64).indices[1]) = std::log(4.0);
  init.weights()(0, featurize(TokenSeq{}, TokenSeq{"beta"}, 64).indices[1]) = std::log(2.0 / 3.0);
  TrainConfig cfg;
  cfg.dim = 64;
  cfg.max_epochs = 1;
  cfg.init = init;
  const auto res = cmd_train_pref(PrefKind::Dpm, ds, cfg);
  std::ostringstream out;
  write_epoch_dump_csv(out, ds, *res.report.first_epoch);
  std::istringstream in(out.str());
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header, "item,q_0,q_1,a_0,a_1,r_0,r_1,alpha");
  auto field = [](const std::string& row, int idx) {
    std::stringstream ss(row);
    std::string f;
    for (int i = 0; i <= idx; ++i) std::getline(ss, f, ',');
    return std::stod(f);
  };
  EXPECT_NEAR(field(row1, 3), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(field(row1, 4), 0.25, 1e-12);
  EXPECT_NEAR(field(row2, 3), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(field(row2, 4), 0.75, 1e-12);
  EXPECT_NEAR(field(row1, 5), 0.7273, 1e-4);
  EXPECT_NEAR(field(row1, 6), 0.2727, 1e-4);
}

TEST(Cli, ExitCodesAndDeterminism) {
  TempDir tmp;
  const std::string dir = tmp.path().string();
  EXPECT_EQ(run_cli("--out-dir " + dir + " --seed 3 simulate --items 40 --dim 1024"), 0);
  const std::string data = dir + "/dataset.jsonl";
  ASSERT_TRUE(fs::exists(data));
  ASSERT_TRUE(fs::exists(dir + "/truth.jsonl"));

  EXPECT_EQ(run_cli("--out-dir " + dir + " train-pref --kind dpm --dim 1024 --max-epochs 20 --data " + data +
                    " --out " + dir + "/a.scorer"),
            0);
  EXPECT_EQ(run_cli("--out-dir " + dir + " train-pref --kind dpm --dim 1024 --max-epochs 20 --data " + data +
                    " --out " + dir + "/b.scorer"),
            0);
  EXPECT_EQ(slurp(dir + "/a.scorer"), slurp(dir + "/b.scorer"));

  EXPECT_EQ(run_cli("--out-dir " + dir + " eval --scorers " + dir + "/a.scorer," + dir + "/planted.scorer --truth " +
                    dir + "/truth.jsonl --data " + data),
            0);
  EXPECT_NE(slurp(dir + "/eval.csv").find("planted,0,1"), std::string::npos);

  // Contract errors exit 1, I/O errors exit 2.
  EXPECT_EQ(run_cli("train-pref --kind median --data " + data), 1);
  EXPECT_EQ(run_cli("train-pref --data /nonexistent/x.jsonl"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  {
    std::ofstream cfg(dir + "/bad.cfg");
    cfg << "seed = 1\nwidth_of_beam = 4\n";
  }
  EXPECT_EQ(run_cli("--config " + dir + "/bad.cfg simulate"), 1);
  EXPECT_EQ(run_cli("--config " + dir + "/missing.cfg simulate"), 2);

  // Priors without raw annotations cannot train the majority baseline.
  {
    std::ofstream soft(dir + "/soft.jsonl");
    soft << R"({"id":"a","context":"c","text":"t","prior":[0.6,0.4]})" << "\n";
  }
  EXPECT_EQ(run_cli("--out-dir " + dir + " train-pref --kind major --data " + dir + "/soft.jsonl"), 1);
}

TEST(Cli, GeneratorPipeline) {
  TempDir tmp;
  const std::string dir = tmp.path().string();
  ASSERT_EQ(run_cli("--out-dir " + dir + " simulate --items 40 --dim 1024"), 0);
  const std::string data = dir + "/dataset.jsonl";
  ASSERT_EQ(run_cli("--out-dir " + dir + " train-pref --dim 1024 --max-epochs 10 --data " + data), 0);
  ASSERT_EQ(run_cli("--out-dir " + dir + " gen-train --steps 30 --dim 512 --data " + data), 0);
  EXPECT_EQ(run_cli("--out-dir " + dir + " score --scorer " + dir + "/dpm.scorer --data " + data), 0);
  for (const char* strategy : {"greedy", "beam", "diverse", "nucleus"}) {
    EXPECT_EQ(run_cli("--out-dir " + dir + " decode --strategy " + std::string(strategy) + " --k 3 --model " + dir +
                      "/generator.model --inputs " + data + " --scorer " + dir + "/dpm.scorer"),
              0)
        << strategy;
  }
  const std::string common = " --scorer " + dir + "/dpm.scorer --model " + dir + "/generator.model --data " + data;
  EXPECT_EQ(run_cli("--out-dir " + dir + " calibrate --k 4 --steps 3" + common), 0);
  EXPECT_EQ(run_cli("--out-dir " + dir + " calibrate --k 4 --steps 3" + common + " --out " + dir + "/c2.model"), 0);
  EXPECT_EQ(slurp(dir + "/calibrated.model"), slurp(dir + "/c2.model"));
  EXPECT_EQ(run_cli("--out-dir " + dir + " sweep-k --ks 2,3 --steps 2" + common), 0);
  EXPECT_EQ(run_cli("--out-dir " + dir + " compare-rl --k 3 --steps 2" + common), 0);
  EXPECT_EQ(run_cli("--out-dir " + dir + " calibrate --k 1" + common), 1);
}
