from __future__ import annotations

import json

import numpy as np
import pytest

from drawage import errors
from drawage.elastic import classify_dba
from drawage.features import extract_channels
from drawage.ingest import GROUPS, parse_session
from drawage.markov import classify_hmm
from drawage.pipeline import (
    Prediction,
    agd,
    config_fingerprint,
    evaluate,
    load_model,
    predict,
    resolve_config,
    run_experiment,
)
from drawage.synth import SynthConfig, generate_corpus, write_corpus
from drawage.util import read_json


def _pred(true_g: int, pred_g: int, child="c", idx=0) -> Prediction:
    return Prediction(
        child_id=child, session_index=idx, true_group=true_g,
        predicted_group=pred_g, scores={g: 0.0 for g in GROUPS},
    )


class TestAgd:
    def test_identity(self):
        assert agd(5, 5) == 0

    def test_extreme(self):
        assert agd(2, 8) == 6

    def test_middle(self):
        assert agd(3, 5) == 2

    def test_out_of_range(self):
        with pytest.raises(errors.OutOfRangeGroup):
            agd(1, 5)
        with pytest.raises(errors.OutOfRangeGroup):
            agd(5, 9)


class TestEvaluate:
    def test_all_correct(self):
        report = evaluate([_pred(g, g) for g in GROUPS])
        assert report.accuracy == 100.0
        assert report.avg_agd == 0.0

    def test_fixed_mixture(self):
        report = evaluate([_pred(2, 2), _pred(3, 3), _pred(4, 5), _pred(8, 6)])
        assert report.accuracy == pytest.approx(50.0)
        assert report.avg_agd == pytest.approx(0.75)

    def test_consistency_with_own_confusion(self):
        rng = np.random.default_rng(0)
        preds = [
            _pred(int(rng.integers(2, 9)), int(rng.integers(2, 9)), idx=i)
            for i in range(300)
        ]
        report = evaluate(preds)
        confusion = np.asarray(report.confusion)
        total = confusion.sum()
        accuracy = 100.0 * np.trace(confusion) / total
        weights = np.abs(np.subtract.outer(GROUPS, GROUPS))
        avg = float((confusion * weights).sum() / total)
        assert report.accuracy == pytest.approx(accuracy, abs=1e-12)
        assert report.avg_agd == pytest.approx(avg, abs=1e-12)
        for gi, g in enumerate(GROUPS):
            row = confusion[gi]
            if row.sum():
                assert report.per_group_agd[g] == pytest.approx(
                    float((row * weights[gi]).sum() / row.sum()), abs=1e-12
                )
            else:
                assert report.per_group_agd[g] is None

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        preds = [_pred(int(rng.integers(2, 9)), int(rng.integers(2, 9)), idx=i) for i in range(50)]
        a = evaluate(preds)
        b = evaluate(list(reversed(preds)))
        assert a.to_dict() == b.to_dict()

    def test_empty(self):
        with pytest.raises(errors.EmptyPredictions):
            evaluate([])

    def test_random_guess_expectation(self):
        rng = np.random.default_rng(2)
        preds = [
            _pred(int(rng.integers(2, 9)), int(rng.integers(2, 9)), idx=i)
            for i in range(10_000)
        ]
        report = evaluate(preds)
        assert abs(report.avg_agd - 16.0 / 7.0) < 0.05


class TestConfig:
    def test_defaults_filled(self):
        resolved = resolve_config({"data_dir": "d"})
        assert resolved["classifier"] == "hmm"
        assert resolved["split_seed"] == resolved["seed"] == 0
        assert resolved["hmm"]["n_states"] == 8

    def test_unknown_key(self):
        with pytest.raises(errors.ConfigInvalid):
            resolve_config({"data_dir": "d", "classifer": "hmm"})

    def test_bad_classifier(self):
        with pytest.raises(errors.ConfigInvalid):
            resolve_config({"data_dir": "d", "classifier": "forest"})

    def test_bad_manual_channel(self):
        with pytest.raises(errors.ConfigInvalid):
            resolve_config({"data_dir": "d", "selection": "manual:V,NoSuch"})

    def test_missing_data_dir(self):
        with pytest.raises(errors.ConfigInvalid):
            resolve_config({})

    def test_fingerprint_stable_and_sensitive(self):
        a = resolve_config({"data_dir": "d", "seed": 1})
        b = resolve_config({"data_dir": "d", "seed": 1})
        c = resolve_config({"data_dir": "d", "seed": 2})
        assert config_fingerprint(a) == config_fingerprint(b)
        assert config_fingerprint(a) != config_fingerprint(c)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    write_corpus(generate_corpus(SynthConfig(per_group=8, seed=21, sigma=1.0)), path)
    return path


def _fast_config(corpus_dir, **overrides):
    config = {
        "data_dir": str(corpus_dir),
        "classifier": "dba",
        "selection": "manual:V,Z,T",
        "seed": 5,
        "dba": {"max_iter": 8, "tol": 1e-3},
        "hmm": {"n_states": 2, "n_mix": 1, "max_em_iter": 8, "em_tol": 1e-3},
    }
    config.update(overrides)
    return config


class TestRunExperiment:
    def test_artifacts_and_determinism(self, corpus_dir, tmp_path):
        config = _fast_config(corpus_dir)
        report1 = run_experiment(config, out_dir=tmp_path / "run1", jobs=1)
        report2 = run_experiment(config, out_dir=tmp_path / "run2", jobs=1)
        bytes1 = (tmp_path / "run1" / "report.json").read_bytes()
        bytes2 = (tmp_path / "run2" / "report.json").read_bytes()
        assert bytes1 == bytes2
        assert report1.to_dict() == report2.to_dict()
        for name in ("config.json", "split.json", "selection.json", "model.json", "predictions.json"):
            assert (tmp_path / "run1" / name).exists()

    def test_report_contents(self, corpus_dir, tmp_path):
        run_experiment(_fast_config(corpus_dir), out_dir=tmp_path, jobs=1)
        doc = read_json(tmp_path / "report.json")
        assert set(doc) == {
            "accuracy", "avg_agd", "per_group_agd", "confusion",
            "config_fingerprint", "versions",
        }
        confusion = np.asarray(doc["confusion"])
        assert confusion.shape == (7, 7)
        assert 0.0 <= doc["accuracy"] <= 100.0
        assert 0.0 <= doc["avg_agd"] <= 6.0
        if doc["accuracy"] == 100.0:
            assert doc["avg_agd"] == 0.0
        assert doc["versions"]["model_format"] == 1

    def test_eval_children_never_trained_on(self, corpus_dir, tmp_path):
        run_experiment(_fast_config(corpus_dir), out_dir=tmp_path, jobs=1)
        split = read_json(tmp_path / "split.json")
        model = read_json(tmp_path / "model.json")
        eval_children = {c for c, part in split["assignment"].items() if part == "eval"}
        trained = set(model["meta"]["train_children"])
        assert model["meta"]["norm_fitted_on"] == "train"
        assert model["meta"]["trained_on"] == ["train"]
        assert not (eval_children & trained)

    def test_hmm_path_and_per_child_vote(self, corpus_dir, tmp_path):
        config = _fast_config(
            corpus_dir, classifier="hmm", per_child_vote=True,
        )
        report = run_experiment(config, out_dir=tmp_path, jobs=1)
        assert 0.0 <= report.accuracy <= 100.0
        preds = read_json(tmp_path / "predictions.json")
        assert all(p["session_index"] == -1 for p in preds)

    def test_refit_on_dev_includes_val_children(self, corpus_dir, tmp_path):
        config = _fast_config(corpus_dir, refit_on_dev=True)
        run_experiment(config, out_dir=tmp_path, jobs=1)
        split = read_json(tmp_path / "split.json")
        model = read_json(tmp_path / "model.json")
        val_children = {c for c, part in split["assignment"].items() if part == "val"}
        assert val_children <= set(model["meta"]["train_children"])

    def test_invalid_classifier_rejected(self, corpus_dir):
        with pytest.raises(errors.ConfigInvalid):
            run_experiment({"data_dir": str(corpus_dir), "classifier": "svm"})


class TestStatSelectionWiring:
    def test_hmm_stat_with_config_grid(self, corpus_dir, tmp_path):
        config = _fast_config(
            corpus_dir,
            classifier="hmm",
            selection="stat",
            hmm_grid={"n_states": [1, 2], "n_mix": [1]},
        )
        report = run_experiment(config, out_dir=tmp_path, jobs=1)
        sel = read_json(tmp_path / "selection.json")
        assert sel["method"] == "stat_hmm"
        assert 1 <= len(sel["selected"]) <= 12
        assert len(sel["extras"]["grid"]) == 2
        chosen = sel["extras"]["chosen"]
        assert chosen["n_states"] in (1, 2) and chosen["n_mix"] == 1
        assert 0.0 <= report.accuracy <= 100.0


class TestPredict:
    def test_prototype_exact_session_scores_zero(self, tmp_path):
        # one training child per group: each prototype equals that child's
        # normalized channels, so predicting the same file scores 0 exactly
        from drawage.elastic import DbaConfig, train_dba
        from drawage.ingest import serialize_session
        from drawage.pipeline import model_to_dict
        from drawage.util import write_json

        from conftest import make_session, pen_down_track

        sessions = []
        for g in GROUPS:
            n = 20 + 2 * g
            xs = 100.0 + float(g) * np.arange(n)
            ys = 50.0 + 3.0 * np.sqrt(np.arange(n)) * g
            s = make_session(pen_down_track(xs, ys), child_id=f"solo{g}", group=g)
            sessions.append(s)
        from drawage.features import ChannelId

        pairs = [(extract_channels(s), s.group) for s in sessions]
        model = train_dba(pairs, [ChannelId.V, ChannelId.Y], cfg=DbaConfig())
        model_path = tmp_path / "model.json"
        write_json(model_path, model_to_dict(model))

        probe = sessions[3]  # group 5
        session_path = serialize_session(probe, tmp_path / "probe.csv")
        prediction = predict(model_path, session_path)
        assert prediction.predicted_group == probe.group
        assert prediction.scores[probe.group] == pytest.approx(0.0, abs=1e-9)

    def test_matches_direct_classification(self, corpus_dir, tmp_path):
        run_experiment(_fast_config(corpus_dir), out_dir=tmp_path, jobs=1)
        session_path = sorted(corpus_dir.glob("*.csv"))[0]
        prediction = predict(tmp_path / "model.json", session_path)
        model = load_model(tmp_path / "model.json")
        cs = extract_channels(parse_session(session_path))
        direct_group, direct_scores = classify_dba(model, cs)
        assert prediction.predicted_group == direct_group
        assert prediction.scores == direct_scores

    def test_hmm_model_autodetected(self, corpus_dir, tmp_path):
        run_experiment(_fast_config(corpus_dir, classifier="hmm"), out_dir=tmp_path, jobs=1)
        session_path = sorted(corpus_dir.glob("*.csv"))[0]
        prediction = predict(tmp_path / "model.json", session_path)
        model = load_model(tmp_path / "model.json")
        cs = extract_channels(parse_session(session_path))
        assert prediction.predicted_group == classify_hmm(model, cs)[0]

    def test_wrong_version_rejected(self, corpus_dir, tmp_path):
        run_experiment(_fast_config(corpus_dir), out_dir=tmp_path, jobs=1)
        doc = read_json(tmp_path / "model.json")
        doc["version"] = 99
        bad = tmp_path / "bad_model.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(errors.ModelFormatError):
            load_model(bad)

    def test_unknown_format_rejected(self, tmp_path):
        bad = tmp_path / "weird.json"
        bad.write_text(json.dumps({"format": "mystery", "version": 1}))
        with pytest.raises(errors.ModelFormatError):
            load_model(bad)
