#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dpm/commands.hpp"
#include "dpm/dataset_io.hpp"
#include "dpm/ingest.hpp"

namespace py = pybind11;
using namespace dpm;

namespace {

std::vector<double> to_vec(const PrefDist& p) { return {p.probs().begin(), p.probs().end()}; }

std::vector<PrefDist> to_dists(const std::vector<std::vector<double>>& rows) {
  std::vector<PrefDist> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r);
  return out;
}

std::vector<std::vector<double>> matrix_rows(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

Matrix rows_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw Error("weights must have at least one row");
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw Error("ragged weight rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

py::dict candidate_dict(const Vocab& vocab, const Candidate& c) {
  py::dict d;
  d["tokens"] = candidate_tokens(vocab, c);
  d["token_logps"] = c.token_logps;
  d["total_logp"] = c.total_logp;
  if (c.pref_score) d["pref_score"] = *c.pref_score;
  return d;
}

py::dict metrics_dict(const AlignmentMetrics& m) {
  py::dict d;
  d["top1_pref"] = m.top1_pref;
  d["spearman"] = m.spearman;
  d["spread"] = m.spread;
  return d;
}

py::dict report_dict(const CalibReport& r) {
  py::dict d;
  d["loss_trace"] = r.loss_trace;
  d["reward_trace"] = r.reward_trace;
  d["samples_per_second"] = r.samples_per_second;
  d["setup_seconds"] = r.setup_seconds;
  d["pre"] = metrics_dict(r.pre);
  d["post"] = metrics_dict(r.post);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Disagreement-aware preference modeling and contrastive calibration";

  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<Error>(m, "DpmError", PyExc_ValueError);

  // core
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });
  m.def(
      "featurize",
      [](const TokenSeq& context, const TokenSeq& text, std::uint32_t dim) {
        const auto f = featurize(context, text, dim);
        return py::make_tuple(f.indices, f.values);
      },
      py::arg("context"), py::arg("text"), py::arg("dim") = kDefaultFeatureDim);
  m.def(
      "empirical_prior",
      [](const std::vector<int>& ann, std::size_t classes, double eps) { return to_vec(empirical_prior(ann, classes, eps)); },
      py::arg("annotations"), py::arg("classes") = 2, py::arg("epsilon") = 0.0);
  m.def("kl_divergence", [](const std::vector<double>& p, const std::vector<double>& q) {
    return kl_divergence(PrefDist(p), PrefDist(q));
  });

  // preference models
  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_property_readonly("class_count", &Dataset::class_count)
      .def_property_readonly("ids",
                             [](const Dataset& d) {
                               std::vector<std::string> ids;
                               for (const auto& it : d.items()) ids.push_back(it.id);
                               return ids;
                             })
      .def_property_readonly("priors", [](const Dataset& d) {
        std::vector<std::vector<double>> p;
        for (const auto& it : d.items()) p.push_back(to_vec(it.prior));
        return p;
      });
  m.def(
      "read_dataset",
      [](const std::filesystem::path& path, std::size_t classes, double epsilon) {
        return read_dataset(path, DatasetReadOptions{classes, epsilon});
      },
      py::arg("path"), py::arg("classes") = 2, py::arg("epsilon") = 0.0);
  m.def("write_dataset", py::overload_cast<const std::filesystem::path&, const Dataset&>(&write_dataset));

  py::class_<Scorer>(m, "Scorer")
      .def(py::init<std::size_t, std::uint32_t>(), py::arg("classes") = 2, py::arg("dim") = kDefaultFeatureDim)
      .def(py::init([](const std::vector<std::vector<double>>& w) { return Scorer(rows_matrix(w)); }))
      .def_property_readonly("classes", &Scorer::classes)
      .def_property_readonly("dim", &Scorer::dim)
      .def_property("weights", [](const Scorer& s) { return matrix_rows(s.weights()); },
                    [](Scorer& s, const std::vector<std::vector<double>>& w) { s = Scorer(rows_matrix(w)); })
      .def("score", [](const Scorer& s, const TokenSeq& c, const TokenSeq& t) { return to_vec(score(s, c, t)); })
      .def("preference_score", [](const Scorer& s, const TokenSeq& c, const TokenSeq& t) { return preference_score(s, c, t); })
      .def("save", [](const Scorer& s, const std::filesystem::path& p) { save_scorer(p, s); })
      .def_static("load", [](const std::filesystem::path& p) { return load_scorer(p); })
      .def("__eq__", [](const Scorer& a, const Scorer& b) { return a == b; });

  m.def("compute_a", [](const std::vector<std::vector<double>>& q) { return matrix_rows(compute_a(to_dists(q)).a); });
  m.def("compute_r", [](const std::vector<std::vector<double>>& priors, const std::vector<std::vector<double>>& q) {
    const auto t = compute_r(to_dists(priors), to_dists(q));
    std::vector<std::vector<double>> r;
    for (const auto& d : t.r) r.push_back(to_vec(d));
    return py::make_tuple(r, t.alphas);
  });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("inner_steps", &TrainConfig::inner_steps)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("tol", &TrainConfig::tol)
      .def_readwrite("minibatch", &TrainConfig::minibatch)
      .def_readwrite("dim", &TrainConfig::dim)
      .def_readwrite("init", &TrainConfig::init)
      .def_property("seed", [](const TrainConfig& c) { return c.seed.value; },
                    [](TrainConfig& c, std::uint64_t s) { c.seed = RngSeed{s}; });

  m.def(
      "train_preference",
      [](const std::string& kind, const Dataset& ds, const TrainConfig& cfg) {
        auto res = cmd_train_pref(parse_pref_kind(kind), ds, cfg);
        return py::make_tuple(std::move(res.scorer), res.report.objective_trace);
      },
      py::arg("kind"), py::arg("dataset"), py::arg("config") = TrainConfig{},
      "Train 'dpm', 'major', 'soft' or 'wo-agg'; returns (scorer, objective_trace).");

  // ingest
  m.def("map_mi_code", [](const std::string& code) { return map_mi_code(code); });
  m.def("consensus_bracket", &consensus_bracket);
  m.def(
      "simulate",
      [](std::size_t n_items, std::size_t n_annotators, std::uint64_t seed, std::uint32_t dim) {
        SimulationConfig cfg;
        cfg.n_items = n_items;
        cfg.n_annotators = n_annotators;
        cfg.seed = RngSeed{seed};
        cfg.dim = dim;
        auto sim = simulate_annotators(cfg);
        std::map<std::string, std::vector<double>> truth;
        for (const auto& [id, rho] : sim.truth) truth[id] = to_vec(rho);
        return py::make_tuple(std::move(sim.dataset), truth, std::move(sim.planted));
      },
      py::arg("n_items") = 200, py::arg("n_annotators") = 3, py::arg("seed") = 0,
      py::arg("dim") = kDefaultFeatureDim, "Returns (dataset, truth by id, planted scorer).");
  m.def("evaluate", [](const std::map<std::string, Scorer>& scorers, const std::map<std::string, std::vector<double>>& truth,
                       const Dataset& ds) {
    std::vector<NamedScorer> named;
    for (const auto& [name, s] : scorers) named.push_back({name, s});
    SyntheticTruth t;
    for (const auto& [id, rho] : truth) t.emplace(id, PrefDist(rho));
    std::map<std::string, py::dict> out;
    for (const auto& row : cmd_eval(named, t, ds)) {
      py::dict d;
      d["mean_kl"] = row.mean_kl;
      d["accuracy"] = row.accuracy;
      out[row.method] = d;
    }
    return out;
  });

  // generator
  py::class_<SeqModel>(m, "SeqModel")
      .def(py::init([](const std::vector<std::string>& content, std::uint32_t dim, std::uint32_t order, std::uint32_t max_len) {
             return SeqModel(Vocab::from_content(content), dim, order, max_len);
           }),
           py::arg("content_tokens"), py::arg("dim") = 4096, py::arg("ngram_order") = 2, py::arg("max_len") = 16)
      .def_property_readonly("vocab", [](const SeqModel& s) {
        return std::vector<std::string>(s.vocab().tokens().begin(), s.vocab().tokens().end());
      })
      .def_property_readonly("dim", &SeqModel::dim)
      .def_property_readonly("max_len", &SeqModel::max_len)
      .def("next_token_dist",
           [](const SeqModel& s, const TokenSeq& x, const TokenSeq& prefix) { return next_token_dist(s, x, prefix); })
      .def("greedy", [](const SeqModel& s, const TokenSeq& x) { return candidate_dict(s.vocab(), decode_greedy(s, x)); })
      .def("beam",
           [](const SeqModel& s, const TokenSeq& x, std::size_t width) {
             std::vector<py::dict> out;
             for (const auto& c : decode_beam(s, x, width)) out.push_back(candidate_dict(s.vocab(), c));
             return out;
           })
      .def("diverse_beam",
           [](const SeqModel& s, const TokenSeq& x, std::size_t k, double penalty) {
             std::vector<py::dict> out;
             for (const auto& c : decode_diverse_beam(s, x, k, penalty)) out.push_back(candidate_dict(s.vocab(), c));
             return out;
           })
      .def("nucleus",
           [](const SeqModel& s, const TokenSeq& x, double p, std::uint64_t seed) {
             return candidate_dict(s.vocab(), decode_nucleus(s, x, p, RngSeed{seed}));
           })
      .def("save", [](const SeqModel& s, const std::filesystem::path& p) { save_seq_model(p, s); })
      .def_static("load", [](const std::filesystem::path& p) { return load_seq_model(p); })
      .def("__eq__", [](const SeqModel& a, const SeqModel& b) { return a == b; });

  m.def(
      "train_generator",
      [](const Dataset& ds, std::uint32_t dim, int steps, double lr) {
        std::vector<std::string> content;
        for (const auto& it : ds.items()) content.insert(content.end(), it.text.begin(), it.text.end());
        GenTrainConfig cfg;
        cfg.dim = dim;
        cfg.steps = steps;
        cfg.lr = lr;
        auto res = train_generator(Vocab::from_content(content), seq_pairs(ds), cfg);
        return py::make_tuple(std::move(res.model), res.loss_trace);
      },
      py::arg("dataset"), py::arg("dim") = GenTrainConfig{}.dim, py::arg("steps") = GenTrainConfig{}.steps,
      py::arg("lr") = GenTrainConfig{}.lr);

  // calibration
  m.def("ranking_loss", [](const std::vector<double>& p, double margin) { return ranking_loss(p, margin); });
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman_correlation(a, b); });

  py::class_<CalibConfig>(m, "CalibConfig")
      .def(py::init<>())
      .def_readwrite("k", &CalibConfig::k)
      .def_readwrite("margin", &CalibConfig::margin)
      .def_readwrite("nll_weight", &CalibConfig::nll_weight)
      .def_readwrite("length_penalty", &CalibConfig::length_penalty)
      .def_readwrite("lr", &CalibConfig::lr)
      .def_readwrite("steps", &CalibConfig::steps)
      .def_readwrite("diversity_penalty", &CalibConfig::diversity_penalty)
      .def_readwrite("eval_k", &CalibConfig::eval_k)
      .def_readwrite("nucleus_p", &CalibConfig::nucleus_p)
      .def_readwrite("baseline_momentum", &CalibConfig::baseline_momentum)
      .def_property("seed", [](const CalibConfig& c) { return c.seed.value; },
                    [](CalibConfig& c, std::uint64_t s) { c.seed = RngSeed{s}; });

  m.def(
      "calibrate",
      [](const SeqModel& model, const Scorer& scorer, const Dataset& ds, const CalibConfig& cfg, double heldout) {
        const auto data = split_pipeline_data(ds, heldout);
        auto res = calibrate(model, scorer, data.train, data.heldout, cfg);
        return py::make_tuple(std::move(res.model), report_dict(res.report));
      },
      py::arg("model"), py::arg("scorer"), py::arg("dataset"), py::arg("config") = CalibConfig{},
      py::arg("heldout_fraction") = 0.25, "Returns (calibrated model, report).");
  m.def(
      "compare_rl",
      [](const SeqModel& model, const Scorer& scorer, const Dataset& ds, const CalibConfig& cfg, double heldout) {
        std::map<std::string, py::dict> out;
        for (const auto& b : cmd_compare_rl(model, scorer, split_pipeline_data(ds, heldout), cfg))
          out[b.method] = report_dict(b.report);
        return out;
      },
      py::arg("model"), py::arg("scorer"), py::arg("dataset"), py::arg("config") = CalibConfig{},
      py::arg("heldout_fraction") = 0.25);
  m.def(
      "sweep_k",
      [](const std::vector<std::size_t>& ks, const SeqModel& model, const Scorer& scorer, const Dataset& ds,
         const CalibConfig& cfg, double heldout) {
        std::map<std::size_t, py::dict> out;
        for (const auto& r : cmd_sweep_k(ks, model, scorer, split_pipeline_data(ds, heldout), cfg)) out[r.k] = report_dict(r.report);
        return out;
      },
      py::arg("ks"), py::arg("model"), py::arg("scorer"), py::arg("dataset"), py::arg("config") = CalibConfig{},
      py::arg("heldout_fraction") = 0.25);
}
