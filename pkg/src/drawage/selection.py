"""Channel selection: statistical screening and greedy forward search.

Both statistical procedures score every channel on its own, then keep the
best ~30% via a strict percentile cut. The forward search adds one channel
per step, always the one with the lowest validation age-group distance,
and stops as soon as the best remaining candidate is strictly worse than
the current set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateScores, EmptyInput
from .features import CHANNELS, ChannelId, ChannelSet, NormStats, apply_norm, channel_by_name, fit_norm
from .ingest import GROUPS
from . import elastic, markov, pipeline
from .util import parallel_map

log = logging.getLogger(__name__)


@dataclass
class ChannelScoreTable:
    scores: dict[ChannelId, float]
    kind: str                      # "dtw_inter_class" | "single_channel_agd"
    higher_is_better: bool

    def to_dict(self) -> dict:
        return {
            "scores": {ch.name: float(self.scores[ch]) for ch in CHANNELS},
            "kind": self.kind,
            "higher_is_better": self.higher_is_better,
        }


@dataclass
class SelectionResult:
    selected: list[ChannelId]
    method: str                    # "stat_dba" | "stat_hmm" | "sfs_dba" | "sfs_hmm" | "manual"
    trace: list[float]
    score_table: ChannelScoreTable | None = None
    threshold: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "method": self.method,
            "selected": [ch.name for ch in self.selected],
            "trace": [float(v) for v in self.trace],
        }
        if self.score_table is not None:
            doc["score_table"] = self.score_table.to_dict()
        if self.threshold is not None:
            doc["threshold"] = float(self.threshold)
        if self.extras:
            doc["extras"] = self.extras
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        table = None
        if "score_table" in d:
            st = d["score_table"]
            table = ChannelScoreTable(
                scores={channel_by_name(k): float(v) for k, v in st["scores"].items()},
                kind=st["kind"],
                higher_is_better=bool(st["higher_is_better"]),
            )
        return cls(
            selected=[channel_by_name(n) for n in d["selected"]],
            method=d["method"],
            trace=[float(v) for v in d.get("trace", [])],
            score_table=table,
            threshold=d.get("threshold"),
            extras=dict(d.get("extras", {})),
        )


def select_above_percentile(scores: dict[ChannelId, float], pct: float) -> tuple[list[ChannelId], float]:
    """Channels strictly above the linear-interpolation percentile of all scores."""
    values = np.array([scores[ch] for ch in CHANNELS])
    threshold = float(np.percentile(values, pct))
    chosen = [ch for ch in CHANNELS if scores[ch] > threshold]
    chosen.sort(key=lambda ch: (-scores[ch], ch.value))
    return chosen, threshold


def select_below_percentile(scores: dict[ChannelId, float], pct: float) -> tuple[list[ChannelId], float]:
    """Channels strictly below the linear-interpolation percentile of all scores."""
    values = np.array([scores[ch] for ch in CHANNELS])
    threshold = float(np.percentile(values, pct))
    chosen = [ch for ch in CHANNELS if scores[ch] < threshold]
    chosen.sort(key=lambda ch: (scores[ch], ch.value))
    return chosen, threshold


def _evaluate_classifier(classify, val: list[tuple[ChannelSet, int]]) -> tuple[float, float]:
    """Average age-group distance and accuracy (%) of a classifier on pairs."""
    distances = []
    correct = 0
    for cs, group in val:
        predicted, _ = classify(cs)
        d = pipeline.agd(group, predicted)
        distances.append(d)
        if d == 0:
            correct += 1
    return float(np.mean(distances)), 100.0 * correct / len(val)


def stat_select_dba(
    train: list[tuple[ChannelSet, int]],
    cfg: elastic.DbaConfig = elastic.DbaConfig(),
    norm: NormStats | None = None,
    jobs: int | None = None,
) -> SelectionResult:
    """Score each channel by the spread of its group prototypes.

    For every channel, seven prototypes are fitted and the mean
    path-normalized warping distance over the 21 unordered group pairs is
    the channel's inter-class score. Channels strictly above the 70th
    percentile of the 25 scores are kept.
    """
    if norm is None:
        norm = fit_norm([cs for cs, _ in train])
    model = elastic.train_dba(train, list(CHANNELS), cfg=cfg, norm=norm, jobs=jobs)

    def channel_score(ch: ChannelId) -> float:
        pair_distances = []
        for i, ga in enumerate(GROUPS):
            for gb in GROUPS[i + 1:]:
                res = elastic.dtw(
                    model.prototypes[(ga, ch)].sequence,
                    model.prototypes[(gb, ch)].sequence,
                )
                pair_distances.append(res.distance / res.path_length)
        return float(np.mean(pair_distances))

    scores = {ch: s for ch, s in zip(CHANNELS, parallel_map(channel_score, CHANNELS, jobs))}
    selected, threshold = select_above_percentile(scores, 70.0)
    if not selected:
        raise DegenerateScores("all channel scores sit at or below the percentile cut")
    return SelectionResult(
        selected=selected,
        method="stat_dba",
        trace=[scores[ch] for ch in CHANNELS],
        score_table=ChannelScoreTable(scores, "dtw_inter_class", higher_is_better=True),
        threshold=threshold,
    )


def stat_select_hmm(
    train: list[tuple[ChannelSet, int]],
    val: list[tuple[ChannelSet, int]],
    grid: list[tuple[int, int]],
    base_params: markov.HmmParams = markov.HmmParams(),
    seed: int = 0,
    norm: NormStats | None = None,
    jobs: int | None = None,
) -> SelectionResult:
    """Grid-search model sizes jointly, then score channels one at a time.

    Step 1 trains on all 25 channels for every (states, mixtures) pair and
    keeps the pair with the lowest validation age-group distance. Step 2
    retrains per channel with that pair; channels strictly below the 30th
    percentile of the per-channel distances are kept.
    """
    if not grid:
        raise EmptyInput("empty (states, mixtures) grid")
    if norm is None:
        norm = fit_norm([cs for cs, _ in train])

    def eval_config(nm: tuple[int, int]) -> tuple[float, float]:
        params = replace(base_params, n_states=nm[0], n_mix=nm[1])
        model = markov.train_hmm(train, list(CHANNELS), params=params, norm=norm, seed=seed, jobs=1)
        return _evaluate_classifier(lambda cs: markov.classify_hmm(model, cs), val)

    grid_results = parallel_map(eval_config, grid, jobs)
    order = sorted(
        zip(grid, grid_results),
        key=lambda kv: (kv[1][0], -kv[1][1], kv[0][0], kv[0][1]),
    )
    (best_n, best_m), (best_agd, best_acc) = order[0]
    log.info("grid search chose n_states=%d n_mix=%d (val agd %.4f)", best_n, best_m, best_agd)
    chosen = replace(base_params, n_states=best_n, n_mix=best_m)

    def channel_score(ch: ChannelId) -> float:
        model = markov.train_hmm(train, [ch], params=chosen, norm=norm, seed=seed, jobs=1)
        avg_agd, _ = _evaluate_classifier(lambda cs: markov.classify_hmm(model, cs), val)
        return avg_agd

    scores = {ch: s for ch, s in zip(CHANNELS, parallel_map(channel_score, CHANNELS, jobs))}
    selected, threshold = select_below_percentile(scores, 30.0)
    if not selected:
        raise DegenerateScores("all channel scores sit at or above the percentile cut")
    return SelectionResult(
        selected=selected,
        method="stat_hmm",
        trace=[scores[ch] for ch in CHANNELS],
        score_table=ChannelScoreTable(scores, "single_channel_agd", higher_is_better=False),
        threshold=threshold,
        extras={
            "grid": [
                {"n_states": n, "n_mix": m, "avg_agd": r[0], "accuracy": r[1]}
                for (n, m), r in zip(grid, grid_results)
            ],
            "chosen": {"n_states": best_n, "n_mix": best_m},
        },
    )


class _DbaCandidateScorer:
    """Caches per-channel prototype distances; subsets then cost nothing.

    Prototypes are independent per channel, so one full training pass plus
    one distance table covers every subset the search will ever ask about.
    """

    def __init__(self, train, val, cfg, norm, jobs):
        self.model = elastic.train_dba(train, list(CHANNELS), cfg=cfg, norm=norm, jobs=jobs)
        self.truth = np.array([g for _, g in val])
        val_norm = [apply_norm(cs, norm) for cs, _ in val]

        def session_table(cs) -> np.ndarray:
            table = np.empty((len(GROUPS), len(CHANNELS)))
            for gi, g in enumerate(GROUPS):
                for ci, ch in enumerate(CHANNELS):
                    table[gi, ci] = elastic.channel_distance(self.model, cs, g, ch)
            return table

        self.dist = np.stack(parallel_map(session_table, val_norm, jobs))

    def evaluate(self, channels: list[ChannelId]) -> tuple[float, float]:
        idx = [ch.value - 1 for ch in channels]
        totals = self.dist[:, :, idx].sum(axis=2)          # (sessions, groups)
        predicted = np.array(GROUPS)[np.argmin(totals, axis=1)]
        distances = np.abs(predicted - self.truth)
        return float(distances.mean()), 100.0 * float((distances == 0).mean())


def sfs(
    classifier_kind: str,
    train: list[tuple[ChannelSet, int]],
    val: list[tuple[ChannelSet, int]],
    dba_cfg: elastic.DbaConfig = elastic.DbaConfig(),
    hmm_params: markov.HmmParams = markov.HmmParams(),
    norm: NormStats | None = None,
    seed: int = 0,
    jobs: int | None = None,
) -> SelectionResult:
    """Greedy forward channel search driven by validation age-group distance.

    Each step trains on the training part with the current set plus one
    candidate and scores the validation part. Ties break toward higher
    accuracy, then the lower channel index. The search stops when the best
    candidate is strictly worse than the incumbent set.
    """
    if classifier_kind not in ("dba", "hmm"):
        raise EmptyInput(f"unknown classifier kind {classifier_kind!r}")
    if norm is None:
        norm = fit_norm([cs for cs, _ in train])

    if classifier_kind == "dba":
        scorer = _DbaCandidateScorer(train, val, dba_cfg, norm, jobs)

        def evaluate_subset(channels: list[ChannelId]) -> tuple[float, float]:
            return scorer.evaluate(channels)
    else:
        def evaluate_subset(channels: list[ChannelId]) -> tuple[float, float]:
            model = markov.train_hmm(train, channels, params=hmm_params, norm=norm, seed=seed, jobs=1)
            return _evaluate_classifier(lambda cs: markov.classify_hmm(model, cs), val)

    incumbent: list[ChannelId] = []
    incumbent_agd = float("inf")
    candidates = list(CHANNELS)
    trace: list[float] = []
    steps: list[dict] = []
    while candidates:
        results = parallel_map(lambda ch: evaluate_subset(incumbent + [ch]), candidates, jobs)
        best_ch, (best_agd, best_acc) = min(
            zip(candidates, results),
            key=lambda kv: (kv[1][0], -kv[1][1], kv[0].value),
        )
        if best_agd > incumbent_agd:
            break
        incumbent.append(best_ch)
        incumbent_agd = best_agd
        candidates.remove(best_ch)
        trace.append(best_agd)
        steps.append({"channel": best_ch.name, "avg_agd": best_agd, "accuracy": best_acc})
        log.info("sfs step %d: +%s (val agd %.4f)", len(incumbent), best_ch.name, best_agd)
    return SelectionResult(
        selected=incumbent,
        method=f"sfs_{classifier_kind}",
        trace=trace,
        extras={"steps": steps},
    )
