"""Experiment orchestration: protocol, metrics, artifact persistence.

The protocol is fixed: split children into train/validation/evaluation,
fit normalization on train only, choose channels on train+validation,
train the final classifier on train, and score the untouched evaluation
sessions. Every persisted artifact carries the config fingerprint.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import elastic, markov
from .errors import ConfigInvalid, EmptyPredictions, ModelFormatError, OutOfRangeGroup
from .features import ChannelId, ChannelSet, NormStats, channel_by_name, extract_channels, fit_norm
from .ingest import (
    GROUPS,
    RawSession,
    SplitPlan,
    load_sessions,
    make_split,
    parse_session,
    split_sessions,
)
from .util import canonical_dumps, parallel_map, read_json, write_json

log = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"

REPORT_FLOAT_DIGITS = 6

DEFAULT_HMM_GRID = {"n_states": [8, 16, 32, 64], "n_mix": [4, 8, 16, 32]}


def agd(true_group: int, predicted_group: int) -> int:
    """Age group distance: absolute difference of group indices."""
    for g in (true_group, predicted_group):
        if g not in GROUPS:
            raise OutOfRangeGroup(f"group {g} outside {GROUPS}")
    return abs(true_group - predicted_group)


@dataclass
class Prediction:
    child_id: str
    session_index: int
    true_group: int
    predicted_group: int
    scores: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "child_id": self.child_id,
            "session_index": self.session_index,
            "true_group": self.true_group,
            "predicted_group": self.predicted_group,
            "scores": {str(g): float(s) for g, s in sorted(self.scores.items())},
        }


@dataclass
class EvalReport:
    accuracy: float
    avg_agd: float
    per_group_agd: dict[int, float | None]
    confusion: np.ndarray
    config_fingerprint: str = ""
    versions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "avg_agd": self.avg_agd,
            "per_group_agd": {
                str(g): (None if v is None else float(v))
                for g, v in sorted(self.per_group_agd.items())
            },
            "confusion": [[int(c) for c in row] for row in self.confusion],
            "config_fingerprint": self.config_fingerprint,
            "versions": dict(self.versions),
        }


def evaluate(predictions: list[Prediction]) -> EvalReport:
    """Accuracy, average distance, per-group distance, and confusion counts."""
    if not predictions:
        raise EmptyPredictions("no predictions to evaluate")
    confusion = np.zeros((len(GROUPS), len(GROUPS)), dtype=np.int64)
    distances = []
    by_group: dict[int, list[int]] = {g: [] for g in GROUPS}
    correct = 0
    for p in predictions:
        d = agd(p.true_group, p.predicted_group)
        distances.append(d)
        by_group[p.true_group].append(d)
        confusion[p.true_group - GROUPS[0], p.predicted_group - GROUPS[0]] += 1
        if d == 0:
            correct += 1
    per_group = {
        g: (float(np.mean(ds)) if ds else None) for g, ds in by_group.items()
    }
    return EvalReport(
        accuracy=100.0 * correct / len(predictions),
        avg_agd=float(np.mean(distances)),
        per_group_agd=per_group,
        confusion=confusion,
        versions=_versions(),
    )


def _versions() -> dict:
    return {"package": PACKAGE_VERSION, "model_format": elastic.MODEL_VERSION}


# --- configuration ---

DEFAULT_CONFIG = {
    "classifier": "hmm",
    "selection": "sfs",
    "seed": 0,
    "split_seed": None,
    "dba": {"max_iter": 30, "tol": 1e-4},
    "hmm": {
        "n_states": 8,
        "n_mix": 4,
        "cov_floor": 1e-4,
        "max_em_iter": 100,
        "em_tol": 1e-4,
        "per_frame": True,
    },
    "hmm_grid": DEFAULT_HMM_GRID,
    "refit_on_dev": False,
    "per_child_vote": False,
}


def resolve_config(config: dict) -> dict:
    """Merge user config over defaults and validate every field."""
    if not isinstance(config, dict):
        raise ConfigInvalid("config must be a JSON object")
    if "data_dir" not in config:
        raise ConfigInvalid("config is missing 'data_dir'")
    unknown = set(config) - set(DEFAULT_CONFIG) - {"data_dir"}
    if unknown:
        raise ConfigInvalid(f"unknown config key(s): {', '.join(sorted(unknown))}")

    resolved: dict = {"data_dir": str(config["data_dir"])}
    for key, default in DEFAULT_CONFIG.items():
        value = config.get(key, default)
        if isinstance(default, dict) and value is not default:
            if not isinstance(value, dict):
                raise ConfigInvalid(f"config key {key!r} must be an object")
            bad = set(value) - set(default)
            if bad:
                raise ConfigInvalid(f"unknown {key} key(s): {', '.join(sorted(bad))}")
            value = {**default, **value}
        resolved[key] = value

    if resolved["classifier"] not in ("dba", "hmm"):
        raise ConfigInvalid(f"classifier must be 'dba' or 'hmm', got {resolved['classifier']!r}")
    sel = resolved["selection"]
    if sel not in ("stat", "sfs") and not (isinstance(sel, str) and sel.startswith("manual:")):
        raise ConfigInvalid(f"selection must be 'stat', 'sfs', or 'manual:<channels>', got {sel!r}")
    if sel.startswith("manual:"):
        names = [n.strip() for n in sel[len("manual:"):].split(",") if n.strip()]
        if not names:
            raise ConfigInvalid("manual selection lists no channels")
        for name in names:
            try:
                channel_by_name(name)
            except Exception as exc:
                raise ConfigInvalid(f"manual selection: {exc}") from None
    if not isinstance(resolved["seed"], int):
        raise ConfigInvalid("seed must be an integer")
    if resolved["split_seed"] is None:
        resolved["split_seed"] = resolved["seed"]
    return resolved


def config_fingerprint(resolved: dict) -> str:
    return hashlib.sha256(canonical_dumps(resolved).encode("utf-8")).hexdigest()


def _dba_config(resolved: dict) -> elastic.DbaConfig:
    d = resolved["dba"]
    return elastic.DbaConfig(max_iter=int(d["max_iter"]), tol=float(d["tol"]))


def _hmm_params(resolved: dict) -> markov.HmmParams:
    return markov.HmmParams.from_dict(resolved["hmm"])


# --- prepared data ---

@dataclass
class PreparedData:
    sessions: list[RawSession]
    split: SplitPlan
    channel_sets: dict[int, ChannelSet]          # id(session) keyed by list position
    parts: dict[str, list[RawSession]]
    norm: NormStats

    def pairs(self, part: str) -> list[tuple[ChannelSet, int]]:
        return [(self.channel_sets[id(s)], s.group) for s in self.parts[part]]


def prepare(resolved: dict) -> PreparedData:
    """Load, split, extract, and fit normalization on the training part."""
    sessions = load_sessions(resolved["data_dir"])
    split = make_split(sessions, resolved["split_seed"])
    parts = split_sessions(sessions, split)
    channel_sets = {id(s): extract_channels(s) for s in sessions}
    norm = fit_norm([channel_sets[id(s)] for s in parts["train"]])
    return PreparedData(
        sessions=sessions,
        split=split,
        channel_sets=channel_sets,
        parts=parts,
        norm=norm,
    )


def select_channels(prep: PreparedData, resolved: dict, jobs: int | None = None):
    """Run the configured selection procedure on train/validation only."""
    from . import selection as selection_mod

    sel = resolved["selection"]
    train_pairs = prep.pairs("train")
    val_pairs = prep.pairs("val")
    if sel.startswith("manual:"):
        names = [n.strip() for n in sel[len("manual:"):].split(",") if n.strip()]
        channels = [channel_by_name(n) for n in names]
        return selection_mod.SelectionResult(
            selected=channels, method="manual", trace=[], extras={}
        )
    if resolved["classifier"] == "dba":
        if sel == "stat":
            return selection_mod.stat_select_dba(
                train_pairs, cfg=_dba_config(resolved), norm=prep.norm, jobs=jobs
            )
        return selection_mod.sfs(
            "dba", train_pairs, val_pairs,
            dba_cfg=_dba_config(resolved), norm=prep.norm, jobs=jobs,
        )
    if sel == "stat":
        grid = resolved["hmm_grid"]
        return selection_mod.stat_select_hmm(
            train_pairs, val_pairs,
            grid=[(int(n), int(m)) for n in grid["n_states"] for m in grid["n_mix"]],
            base_params=_hmm_params(resolved),
            seed=resolved["seed"],
            norm=prep.norm,
            jobs=jobs,
        )
    return selection_mod.sfs(
        "hmm", train_pairs, val_pairs,
        hmm_params=_hmm_params(resolved), seed=resolved["seed"],
        norm=prep.norm, jobs=jobs,
    )


def train_final(
    prep: PreparedData, resolved: dict, channels: list[ChannelId], jobs: int | None = None
):
    """Train the deliverable model on train (or train+validation if configured)."""
    pairs = prep.pairs("train")
    if resolved["refit_on_dev"]:
        pairs = pairs + prep.pairs("val")
    if resolved["classifier"] == "dba":
        model = elastic.train_dba(pairs, channels, cfg=_dba_config(resolved), norm=prep.norm, jobs=jobs)
        model.meta = _provenance(prep, resolved)
        return model
    model = markov.train_hmm(
        pairs, channels, params=_hmm_params(resolved), norm=prep.norm,
        seed=resolved["seed"], jobs=jobs,
    )
    model.meta.update(_provenance(prep, resolved))
    return model


def _provenance(prep: PreparedData, resolved: dict) -> dict:
    trained_on = ["train", "val"] if resolved["refit_on_dev"] else ["train"]
    children = sorted({s.child_id for part in trained_on for s in prep.parts[part]})
    return {
        "trained_on": trained_on,
        "train_children": children,
        "norm_fitted_on": "train",
    }


def _classify_fn(model):
    if isinstance(model, elastic.DbaModel):
        return lambda cs: elastic.classify_dba(model, cs)
    return lambda cs: markov.classify_hmm(model, cs)


def predict_sessions(
    model, prep: PreparedData, part: str, jobs: int | None = None
) -> list[Prediction]:
    classify = _classify_fn(model)

    def run(s: RawSession) -> Prediction:
        cs = prep.channel_sets[id(s)]
        predicted, scores = classify(cs)
        return Prediction(
            child_id=s.child_id,
            session_index=s.session_index,
            true_group=s.group,
            predicted_group=predicted,
            scores=scores,
        )

    return parallel_map(run, prep.parts[part], jobs)


def _vote_by_child(predictions: list[Prediction]) -> list[Prediction]:
    """Collapse per-session predictions into one majority vote per child."""
    by_child: dict[str, list[Prediction]] = {}
    for p in predictions:
        by_child.setdefault(p.child_id, []).append(p)
    voted = []
    for child in sorted(by_child):
        preds = by_child[child]
        counts: dict[int, int] = {}
        for p in preds:
            counts[p.predicted_group] = counts.get(p.predicted_group, 0) + 1
        winner = min(counts, key=lambda g: (-counts[g], g))
        mean_scores = {
            g: float(np.mean([p.scores[g] for p in preds])) for g in preds[0].scores
        }
        voted.append(
            Prediction(
                child_id=child,
                session_index=-1,
                true_group=preds[0].true_group,
                predicted_group=winner,
                scores=mean_scores,
            )
        )
    return voted


def model_to_dict(model) -> dict:
    if isinstance(model, elastic.DbaModel):
        return elastic.dba_to_dict(model)
    return markov.hmm_to_dict(model)


def load_model(path):
    d = read_json(path)
    fmt = d.get("format")
    version = d.get("version")
    if version != elastic.MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version!r}")
    if fmt == elastic.MODEL_FORMAT:
        return elastic.dba_from_dict(d)
    if fmt == markov.MODEL_FORMAT:
        return markov.hmm_from_dict(d)
    raise ModelFormatError(f"{path}: unknown model format {fmt!r}")


def predict(model_path, session_path) -> Prediction:
    """Classify one canonical session file with a serialized model."""
    model = load_model(model_path)
    session = parse_session(session_path)
    cs = extract_channels(session)
    predicted, scores = _classify_fn(model)(cs)
    return Prediction(
        child_id=session.child_id,
        session_index=session.session_index,
        true_group=session.group,
        predicted_group=predicted,
        scores=scores,
    )


def run_experiment(
    config: dict, out_dir: Path | str | None = None, jobs: int | None = None
) -> EvalReport:
    """Execute the full protocol and persist all artifacts.

    Returns the evaluation report; writes split.json, selection.json,
    model.json, report.json, and the resolved config when out_dir is given.
    """
    resolved = resolve_config(config)
    fingerprint = config_fingerprint(resolved)
    log.info("experiment start fingerprint=%s", fingerprint)

    prep = prepare(resolved)
    selection = select_channels(prep, resolved, jobs=jobs)
    model = train_final(prep, resolved, selection.selected, jobs=jobs)
    predictions = predict_sessions(model, prep, "eval", jobs=jobs)
    if resolved["per_child_vote"]:
        predictions = _vote_by_child(predictions)
    report = evaluate(predictions)
    report.config_fingerprint = fingerprint

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "config.json", {**resolved, "fingerprint": fingerprint})
        split_doc = prep.split.to_dict()
        split_doc["config_fingerprint"] = fingerprint
        write_json(out_dir / "split.json", split_doc)
        sel_doc = selection.to_dict()
        sel_doc["config_fingerprint"] = fingerprint
        write_json(out_dir / "selection.json", sel_doc)
        model_doc = model_to_dict(model)
        model_doc["config_fingerprint"] = fingerprint
        write_json(out_dir / "model.json", model_doc)
        write_json(out_dir / "report.json", report.to_dict(), ndigits=REPORT_FLOAT_DIGITS)
        write_json(
            out_dir / "predictions.json",
            [p.to_dict() for p in predictions],
            ndigits=REPORT_FLOAT_DIGITS,
        )
    log.info("experiment done accuracy=%.2f avg_agd=%.4f", report.accuracy, report.avg_agd)
    return report
