#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpm/commands.hpp"
#include "dpm/dataset_io.hpp"
#include "dpm/error.hpp"
#include "dpm/run_config.hpp"

namespace fs = std::filesystem;
using namespace dpm;

namespace {

// Flags that feed RunConfig keys are kept as strings and applied after the
// config file, so every value goes through the same schema check.
struct KeyFlags {
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app->add_option(flag, values[key], help));
  }
  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) cfg.set(key, values.at(key));
  }
};

struct Globals {
  std::string config;
  std::string seed;
  std::string out_dir = ".";
};

fs::path out_path(const Globals& g, const std::string& given, const std::string& fallback) {
  return given.empty() ? fs::path(g.out_dir) / fallback : fs::path(given);
}

std::vector<TokenSeq> read_inputs(const fs::path& path) {
  auto in = open_input(path);
  std::vector<TokenSeq> inputs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("context") || !j["context"].is_string())
      throw Error("line " + std::to_string(lineno) + ": missing string field 'context'");
    inputs.push_back(tokenize(j["context"].get<std::string>()));
  }
  return inputs;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string::npos ? s.size() : comma;
    if (end > start) out.push_back(s.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  auto out = open_output(path);
  body(out);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

int run(int argc, char** argv) {
  CLI::App app{"Disagreement-aware preference modeling and contrastive calibration"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file");
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--out-dir", g.out_dir, "Directory for default output paths");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Convert MI-code or consensus-scale JSONL to the dataset format");
  std::string ingest_format, ingest_input, ingest_out;
  ingest->add_option("--format", ingest_format, "mi or consensus")->required();
  ingest->add_option("--input", ingest_input, "Input JSONL")->required();
  ingest->add_option("--out", ingest_out, "Output dataset JSONL");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic annotated benchmark with ground truth");
  KeyFlags sim_flags;
  sim_flags.add(simulate, "--items", "items", "Number of items");
  sim_flags.add(simulate, "--annotators", "annotators", "Annotators per item");
  sim_flags.add(simulate, "--dim", "dim", "Feature dimension");

  // train-pref
  auto* train_pref = app.add_subcommand("train-pref", "Train a preference model");
  KeyFlags tp_flags;
  std::string tp_data, tp_out, tp_report, tp_dump;
  tp_flags.add(train_pref, "--kind", "kind", "dpm, major, soft or wo-agg");
  train_pref->add_option("--data", tp_data, "Dataset JSONL")->required();
  train_pref->add_option("--out", tp_out, "Scorer output");
  train_pref->add_option("--report", tp_report, "Objective trace CSV");
  train_pref->add_option("--debug-dump", tp_dump, "First-epoch q/a/r CSV (dpm only)");
  std::string tp_init;
  train_pref->add_option("--init", tp_init, "Scorer to start from instead of zero weights");
  tp_flags.add(train_pref, "--lr", "lr", "Learning rate");
  tp_flags.add(train_pref, "--inner-steps", "inner_steps", "Gradient steps per epoch");
  tp_flags.add(train_pref, "--max-epochs", "max_epochs", "Epoch limit");
  tp_flags.add(train_pref, "--tol", "tol", "Convergence tolerance");
  tp_flags.add(train_pref, "--epsilon", "epsilon", "Prior smoothing");
  tp_flags.add(train_pref, "--dim", "dim", "Feature dimension");

  // score
  auto* score_cmd = app.add_subcommand("score", "Preference scores for dataset items");
  std::string sc_scorer, sc_data, sc_out;
  score_cmd->add_option("--scorer", sc_scorer, "Scorer file")->required();
  score_cmd->add_option("--data", sc_data, "Dataset JSONL")->required();
  score_cmd->add_option("--out", sc_out, "Output CSV");

  // gen-train
  auto* gen_train = app.add_subcommand("gen-train", "Fit the sequence model to dataset texts");
  KeyFlags gt_flags;
  std::string gt_data, gt_out, gt_report;
  gen_train->add_option("--data", gt_data, "Dataset JSONL")->required();
  gen_train->add_option("--out", gt_out, "Model output");
  gen_train->add_option("--report", gt_report, "Loss trace CSV");
  gt_flags.add(gen_train, "--steps", "gen_steps", "Gradient steps");
  gt_flags.add(gen_train, "--lr", "gen_lr", "Learning rate");
  gt_flags.add(gen_train, "--dim", "gen_dim", "Feature dimension");
  gt_flags.add(gen_train, "--max-len", "max_len", "Maximum generated tokens");

  // decode
  auto* decode = app.add_subcommand("decode", "Generate candidates for each input");
  KeyFlags dec_flags;
  std::string dec_model, dec_inputs, dec_out, dec_scorer;
  decode->add_option("--model", dec_model, "Model file")->required();
  decode->add_option("--inputs", dec_inputs, "JSONL with a 'context' field per line")->required();
  decode->add_option("--out", dec_out, "Candidate JSONL");
  decode->add_option("--scorer", dec_scorer, "Rank candidates by this scorer");
  dec_flags.add(decode, "--strategy", "strategy", "greedy, beam, diverse or nucleus");
  dec_flags.add(decode, "--k", "k", "Beam width or number of groups/samples");
  dec_flags.add(decode, "--p", "nucleus_p", "Nucleus mass");
  dec_flags.add(decode, "--penalty", "diversity_penalty", "Diverse-beam penalty");

  // calibrate / sweep-k / compare-rl share their pipeline flags
  struct PipelineFlags {
    KeyFlags keys;
    std::string scorer, model, data, out, report;
  };
  auto add_pipeline = [](CLI::App* sub, PipelineFlags& f) {
    sub->add_option("--scorer", f.scorer, "Scorer file")->required();
    sub->add_option("--model", f.model, "Model file")->required();
    sub->add_option("--data", f.data, "Dataset JSONL for training pairs and held-out inputs")->required();
    f.keys.add(sub, "--k", "k", "Candidates per input");
    f.keys.add(sub, "--margin", "margin", "Base ranking margin");
    f.keys.add(sub, "--length-penalty", "length_penalty", "Length normalization exponent");
    f.keys.add(sub, "--lr", "calib_lr", "Learning rate");
    f.keys.add(sub, "--steps", "calib_steps", "Update steps");
    f.keys.add(sub, "--heldout-fraction", "heldout_fraction", "Share of items held out");
  };
  auto* calib = app.add_subcommand("calibrate", "Contrastive calibration of the sequence model");
  PipelineFlags cal;
  add_pipeline(calib, cal);
  calib->add_option("--out", cal.out, "Calibrated model output");
  calib->add_option("--report", cal.report, "Report CSV");

  auto* sweep = app.add_subcommand("sweep-k", "Calibrate once per candidate count");
  PipelineFlags sw;
  add_pipeline(sweep, sw);
  sw.keys.add(sweep, "--ks", "ks", "Comma-separated candidate counts");
  sweep->add_option("--out", sw.out, "Sweep CSV");

  auto* compare = app.add_subcommand("compare-rl", "Contrastive calibration against REINFORCE");
  PipelineFlags cmp;
  add_pipeline(compare, cmp);
  compare->add_option("--out", cmp.out, "Comparison CSV");

  // eval
  auto* eval = app.add_subcommand("eval", "Compare scorers against synthetic ground truth");
  std::string ev_scorers, ev_truth, ev_data, ev_out;
  eval->add_option("--scorers", ev_scorers, "Comma-separated scorer files")->required();
  eval->add_option("--truth", ev_truth, "Truth JSONL")->required();
  eval->add_option("--data", ev_data, "Dataset JSONL")->required();
  eval->add_option("--out", ev_out, "Summary CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg = g.config.empty() ? RunConfig{} : RunConfig::load(g.config);
  if (!g.seed.empty()) cfg.set("seed", g.seed);

  if (ingest->parsed()) {
    auto in = open_input(ingest_input);
    Dataset ds = ingest_format == "mi"          ? convert_mi(read_mi_records(in))
                 : ingest_format == "consensus" ? convert_consensus(read_consensus_records(in), cfg.seed())
                                                : throw Error("unknown ingest format '" + ingest_format + "'");
    write_dataset(out_path(g, ingest_out, "dataset.jsonl"), ds);
  } else if (simulate->parsed()) {
    sim_flags.apply(cfg);
    const Simulation sim = simulate_annotators(cfg.simulation_config());
    write_dataset(fs::path(g.out_dir) / "dataset.jsonl", sim.dataset);
    write_file(fs::path(g.out_dir) / "truth.jsonl", [&](std::ostream& o) { write_truth(o, sim.dataset, sim.truth); });
    save_scorer(fs::path(g.out_dir) / "planted.scorer", sim.planted);
  } else if (train_pref->parsed()) {
    tp_flags.apply(cfg);
    const PrefKind kind = parse_pref_kind(cfg.string("kind", "dpm"));
    const Dataset ds = read_dataset(fs::path(tp_data), cfg.read_options());
    TrainConfig tc = cfg.train_config();
    if (!tp_init.empty()) {
      tc.init = load_scorer(fs::path(tp_init));
      if (!cfg.has("dim")) tc.dim = tc.init->dim();
    }
    const TrainResult res = cmd_train_pref(kind, ds, tc);
    save_scorer(out_path(g, tp_out, pref_kind_name(kind) + ".scorer"), res.scorer);
    write_file(out_path(g, tp_report, pref_kind_name(kind) + "_report.csv"),
               [&](std::ostream& o) { write_train_report_csv(o, res.report); });
    if (!tp_dump.empty()) {
      if (!res.report.first_epoch) throw Error("--debug-dump is only available for kind=dpm");
      write_file(tp_dump, [&](std::ostream& o) { write_epoch_dump_csv(o, ds, *res.report.first_epoch); });
    }
  } else if (score_cmd->parsed()) {
    const Scorer scorer = load_scorer(fs::path(sc_scorer));
    const Dataset ds = read_dataset(fs::path(sc_data), cfg.read_options());
    write_file(out_path(g, sc_out, "scores.csv"), [&](std::ostream& o) {
      o << "id,score\n";
      char buf[40];
      for (const auto& item : ds.items()) {
        std::snprintf(buf, sizeof buf, "%.17g", preference_score(scorer, item.context, item.text));
        o << item.id << ',' << buf << '\n';
      }
    });
  } else if (gen_train->parsed()) {
    gt_flags.apply(cfg);
    const Dataset ds = read_dataset(fs::path(gt_data), cfg.read_options());
    std::vector<std::string> content;
    for (const auto& item : ds.items()) content.insert(content.end(), item.text.begin(), item.text.end());
    const auto pairs = seq_pairs(ds);
    const GenTrainResult res = train_generator(Vocab::from_content(content), pairs, cfg.gen_config());
    save_seq_model(out_path(g, gt_out, "generator.model"), res.model);
    if (!gt_report.empty()) {
      write_file(gt_report, [&](std::ostream& o) {
        o << "step,loss\n";
        char buf[40];
        for (std::size_t s = 0; s < res.loss_trace.size(); ++s) {
          std::snprintf(buf, sizeof buf, "%.17g", res.loss_trace[s]);
          o << (s + 1) << ',' << buf << '\n';
        }
      });
    }
  } else if (decode->parsed()) {
    dec_flags.apply(cfg);
    const SeqModel model = load_seq_model(fs::path(dec_model));
    const auto inputs = read_inputs(dec_inputs);
    const std::string strategy = cfg.string("strategy", "beam");
    const CalibConfig cc = cfg.calib_config();
    std::vector<CandidateSet> sets;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      CandidateSet set{inputs[i], {}};
      if (strategy == "greedy") {
        set.candidates.push_back(decode_greedy(model, inputs[i]));
      } else if (strategy == "beam") {
        set.candidates = decode_beam(model, inputs[i], cc.k);
      } else if (strategy == "diverse") {
        set.candidates = decode_diverse_beam(model, inputs[i], cc.k, cc.diversity_penalty);
      } else if (strategy == "nucleus") {
        for (std::size_t s = 0; s < cc.k; ++s) {
          auto c = decode_nucleus(model, inputs[i], cc.nucleus_p, RngSeed{derive_seed(cc.seed, i * cc.k + s)});
          c.decode_index = s;
          set.candidates.push_back(std::move(c));
        }
      } else {
        throw Error("unknown decode strategy '" + strategy + "'");
      }
      sets.push_back(std::move(set));
    }
    if (!dec_scorer.empty()) sets = rank_by_preference(load_scorer(fs::path(dec_scorer)), model.vocab(), std::move(sets));
    write_file(out_path(g, dec_out, "candidates.jsonl"),
               [&](std::ostream& o) { write_candidate_sets(o, model.vocab(), sets); });
  } else if (calib->parsed() || sweep->parsed() || compare->parsed()) {
    PipelineFlags& f = calib->parsed() ? cal : sweep->parsed() ? sw : cmp;
    f.keys.apply(cfg);
    const Scorer scorer = load_scorer(fs::path(f.scorer));
    const SeqModel model = load_seq_model(fs::path(f.model));
    const Dataset ds = read_dataset(fs::path(f.data), cfg.read_options());
    const PipelineData data = split_pipeline_data(ds, cfg.real("heldout_fraction", 0.25));
    const CalibConfig cc = cfg.calib_config();
    if (calib->parsed()) {
      const CalibrationResult res = calibrate(model, scorer, data.train, data.heldout, cc);
      save_seq_model(out_path(g, f.out, "calibrated.model"), res.model);
      write_file(out_path(g, f.report, "calibrate_report.csv"),
                 [&](std::ostream& o) { write_calib_report_csv(o, res.report); });
    } else if (sweep->parsed()) {
      std::vector<std::size_t> ks;
      for (auto k : cfg.unsigned_list("ks", {5, 10, 15, 20})) ks.push_back(static_cast<std::size_t>(k));
      const auto rows = cmd_sweep_k(ks, model, scorer, data, cc);
      write_file(out_path(g, f.out, "sweep_k.csv"), [&](std::ostream& o) { write_sweep_csv(o, rows); });
    } else {
      const auto blocks = cmd_compare_rl(model, scorer, data, cc);
      write_file(out_path(g, f.out, "compare_rl.csv"), [&](std::ostream& o) { write_compare_csv(o, blocks); });
    }
  } else if (eval->parsed()) {
    std::vector<NamedScorer> scorers;
    for (const auto& path : split_commas(ev_scorers))
      scorers.push_back({fs::path(path).stem().string(), load_scorer(fs::path(path))});
    const Dataset ds = read_dataset(fs::path(ev_data), cfg.read_options());
    const auto rows = cmd_eval(scorers, read_truth(fs::path(ev_truth)), ds);
    write_file(out_path(g, ev_out, "eval.csv"), [&](std::ostream& o) { write_eval_csv(o, rows); });
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
