import json
import math
import os
from pathlib import Path

import pytest

import dpmkit

DATA_DIR = Path(os.environ.get("DPM_TEST_DATA_DIR", Path(__file__).resolve().parents[1] / "data"))


def test_featurize_matches_golden():
    golden = json.loads((DATA_DIR / "golden_features.json").read_text())
    for case in golden["features"]:
        indices, values = dpmkit.featurize(case["context"], case["text"], case["dim"])
        assert indices == case["expected"]["indices"]
        assert values == pytest.approx(case["expected"]["values"])


def test_prior_and_kl():
    prior = dpmkit.empirical_prior([0, 0, 1], 2, 0.0)
    assert prior == pytest.approx([2 / 3, 1 / 3])
    assert dpmkit.kl_divergence(prior, prior) == pytest.approx(0.0)
    assert dpmkit.kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))


def test_posterior_targets_normalize():
    q = [[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]
    a = dpmkit.compute_a(q)
    for col in range(2):
        assert sum(row[col] for row in a) == pytest.approx(1.0)
    r, alphas = dpmkit.compute_r([[0.5, 0.5]] * 3, q)
    assert len(alphas) == 3
    for row in r:
        assert sum(row) == pytest.approx(1.0)


def test_invalid_distribution_raises():
    with pytest.raises(ValueError):
        dpmkit.kl_divergence([0.7, 0.7], [0.5, 0.5])


@pytest.fixture(scope="module")
def sim():
    return dpmkit.simulate(n_items=80, n_annotators=3, seed=7, dim=1 << 12)


def test_train_and_evaluate(sim):
    dataset, truth, planted = sim
    assert len(dataset) == 80
    cfg = dpmkit.TrainConfig()
    cfg.dim = 1 << 12
    cfg.max_epochs = 20
    scorers = {}
    for kind in ("dpm", "major", "soft", "wo-agg"):
        scorer, trace = dpmkit.train_preference(kind, dataset, cfg)
        assert trace and all(math.isfinite(x) for x in trace)
        scorers[kind] = scorer
    scorers["planted"] = planted
    rows = dpmkit.evaluate(scorers, truth, dataset)
    assert rows["planted"]["mean_kl"] == pytest.approx(0.0, abs=1e-9)
    for row in rows.values():
        assert 0.0 <= row["accuracy"] <= 1.0


def test_scorer_round_trip(tmp_path, sim):
    _, _, planted = sim
    path = tmp_path / "planted.scorer"
    planted.save(path)
    assert dpmkit.Scorer.load(path) == planted
    with pytest.raises(OSError):
        dpmkit.Scorer.load(tmp_path / "missing.scorer")


def test_decode_and_calibrate(sim):
    dataset, _, planted = sim
    model, loss = dpmkit.train_generator(dataset, dim=1 << 10, steps=40)
    assert loss[-1] < loss[0]
    context = ["c0", "c1", "c2"]
    greedy = model.greedy(context)
    assert greedy["tokens"][-1] == "</s>"
    beams = model.beam(context, 3)
    assert beams[0]["total_logp"] >= greedy["total_logp"] - 1e-9
    diverse = model.diverse_beam(context, 4, 0.5)
    assert len(diverse) == 4
    assert model.nucleus(context, 0.9, 3) == model.nucleus(context, 0.9, 3)

    cfg = dpmkit.CalibConfig()
    cfg.k = 4
    cfg.steps = 5
    tuned, report = dpmkit.calibrate(model, planted, dataset, cfg)
    assert len(report["loss_trace"]) == 5
    assert set(report["post"]) == {"top1_pref", "spearman", "spread"}
    assert tuned.vocab == model.vocab


def test_ranking_loss():
    assert dpmkit.ranking_loss([0.0, -1.0, -2.0], 0.1) == pytest.approx(0.0)
    assert dpmkit.ranking_loss([-1.0, 0.0], 0.0) == pytest.approx(1.0)
