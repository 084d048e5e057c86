#include "dpm/commands.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace dpm {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PrefKind parse_pref_kind(const std::string& name) {
  if (name == "dpm") return PrefKind::Dpm;
  if (name == "major") return PrefKind::Major;
  if (name == "soft") return PrefKind::Soft;
  if (name == "wo-agg") return PrefKind::WoAgg;
  throw Error("unknown preference model kind '" + name + "' (expected dpm, major, soft or wo-agg)");
}

std::string pref_kind_name(PrefKind kind) {
  switch (kind) {
    case PrefKind::Dpm: return "dpm";
    case PrefKind::Major: return "major";
    case PrefKind::Soft: return "soft";
    case PrefKind::WoAgg: return "wo-agg";
  }
  return "?";
}

TrainResult cmd_train_pref(PrefKind kind, const Dataset& dataset, const TrainConfig& config) {
  switch (kind) {
    case PrefKind::Dpm: return train_dpm(dataset, config);
    case PrefKind::Major: return train_majority(dataset, config);
    case PrefKind::Soft: return train_soft(dataset, config);
    case PrefKind::WoAgg: return train_wo_agg(dataset, config);
  }
  throw Error("unknown preference model kind");
}

void write_epoch_dump_csv(std::ostream& out, const Dataset& dataset, const EpochSnapshot& snap) {
  const std::size_t C = dataset.class_count();
  out << "item";
  for (const char* p : {"q", "a", "r"})
    for (std::size_t k = 0; k < C; ++k) out << ',' << p << '_' << k;
  out << ",alpha\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.items()[i].id;
    for (std::size_t k = 0; k < C; ++k) out << ',' << fmt(snap.q[i][k]);
    for (std::size_t k = 0; k < C; ++k) out << ',' << fmt(snap.a.a(i, k));
    for (std::size_t k = 0; k < C; ++k) out << ',' << fmt(snap.targets.r[i][k]);
    out << ',' << fmt(snap.targets.alphas[i]) << '\n';
  }
}

std::vector<SeqPair> seq_pairs(const Dataset& dataset) {
  std::vector<SeqPair> pairs;
  pairs.reserve(dataset.size());
  for (const auto& item : dataset.items()) pairs.push_back(make_seq_pair(item.context, item.text));
  return pairs;
}

PipelineData split_pipeline_data(const Dataset& dataset, double heldout_fraction) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
    throw Error("heldout_fraction must be in (0, 1)");
  const std::size_t n = dataset.size();
  const auto n_held = static_cast<std::size_t>(std::lround(heldout_fraction * static_cast<double>(n)));
  if (n_held == 0 || n_held >= n) throw Error("dataset too small for a train/held-out split");
  PipelineData data;
  auto pairs = seq_pairs(dataset);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n - n_held)
      data.train.push_back(std::move(pairs[i]));
    else
      data.heldout.push_back(dataset.items()[i].context);
  }
  return data;
}

Benchmark build_benchmark(const BenchmarkConfig& config) {
  Simulation sim = simulate_annotators(config.simulation);
  TrainConfig pref = config.preference;
  pref.dim = config.simulation.dim;
  Scorer scorer = train_dpm(sim.dataset, pref).scorer;
  PipelineData data = split_pipeline_data(sim.dataset, config.heldout_fraction);
  const Vocab vocab = Vocab::from_content(sim.text_vocab);
  SeqModel model = train_generator(vocab, data.train, config.generator).model;
  return Benchmark{std::move(sim), std::move(scorer), std::move(model), std::move(data)};
}

std::vector<EvalSummary> cmd_eval(std::span<const NamedScorer> scorers, const SyntheticTruth& truth,
                                  const Dataset& dataset) {
  std::string missing;
  for (const auto& item : dataset.items()) {
    if (truth.count(item.id) == 0) missing += (missing.empty() ? "" : ", ") + item.id;
  }
  if (!missing.empty()) throw Error("truth is missing ids: " + missing);
  if (dataset.size() == 0) throw Error("cannot evaluate on an empty dataset");

  std::vector<EvalSummary> rows;
  for (const auto& named : scorers) {
    const auto features = featurize_dataset(dataset, named.scorer.dim());
    const auto q = score_all(named.scorer, features);
    double kl = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const PrefDist& rho = truth.at(dataset.items()[i].id);
      kl += kl_divergence(rho, q[i]);
      if (q[i].argmax() == rho.argmax()) ++correct;
    }
    EvalSummary row;
    row.method = named.name;
    row.mean_kl = kl / static_cast<double>(dataset.size());
    row.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    const double nan = std::nan("");
    row.pre = row.post = AlignmentMetrics{nan, nan, nan};
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : fmt(v); }

}  // namespace

void write_eval_csv(std::ostream& out, std::span<const EvalSummary> rows) {
  out << "method,mean_kl,accuracy,top1_pref,spearman,spread\n";
  for (const auto& r : rows) {
    out << r.method << ',' << cell(r.mean_kl) << ',' << cell(r.accuracy) << ',' << cell(r.post.top1_pref) << ','
        << cell(r.post.spearman) << ',' << cell(r.post.spread) << '\n';
  }
}

std::vector<SweepRow> cmd_sweep_k(std::span<const std::size_t> ks, const SeqModel& model, const Scorer& scorer,
                                  const PipelineData& data, const CalibConfig& config) {
  for (std::size_t k : ks)
    if (k < 2) throw Error("sweep-k: every K must be >= 2, got " + std::to_string(k));
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    CalibConfig c = config;
    c.k = k;
    rows.push_back(SweepRow{k, calibrate(model, scorer, data.train, data.heldout, c).report});
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "k,final_loss,pre_top1_pref,pre_spearman,pre_spread,post_top1_pref,post_spearman,post_spread,"
         "samples_per_second\n";
  for (const auto& r : rows) {
    const auto& rep = r.report;
    const double loss = rep.loss_trace.empty() ? std::nan("") : rep.loss_trace.back();
    out << r.k << ',' << cell(loss) << ',' << fmt(rep.pre.top1_pref) << ',' << fmt(rep.pre.spearman) << ','
        << fmt(rep.pre.spread) << ',' << fmt(rep.post.top1_pref) << ',' << fmt(rep.post.spearman) << ','
        << fmt(rep.post.spread) << ',' << fmt(rep.samples_per_second) << '\n';
  }
}

std::vector<MethodBlock> cmd_compare_rl(const SeqModel& model, const Scorer& scorer, const PipelineData& data,
                                        const CalibConfig& config) {
  std::vector<TokenSeq> inputs;
  inputs.reserve(data.train.size());
  for (const auto& p : data.train) inputs.push_back(p.x);
  std::vector<MethodBlock> blocks;
  blocks.push_back({"contrastive", calibrate(model, scorer, data.train, data.heldout, config).report});
  blocks.push_back({"reinforce", reinforce_baseline(model, scorer, inputs, data.heldout, config).report});
  return blocks;
}

void write_compare_csv(std::ostream& out, std::span<const MethodBlock> blocks) {
  out << "method,step,loss,samples_per_second,post_top1_pref,post_spearman,post_spread\n";
  for (const auto& b : blocks) {
    const auto& rep = b.report;
    for (std::size_t s = 0; s < rep.loss_trace.size(); ++s) {
      out << b.method << ',' << (s + 1) << ',' << fmt(rep.loss_trace[s]) << ',' << fmt(rep.samples_per_second) << ','
          << fmt(rep.post.top1_pref) << ',' << fmt(rep.post.spearman) << ',' << fmt(rep.post.spread) << '\n';
    }
  }
}

}  // namespace dpm
