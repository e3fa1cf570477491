"""Per-group Gaussian-mixture hidden Markov models.

One model per age group, trained with Baum-Welch over all of that group's
observation matrices. Forward and backward recursions run in scaled linear
space with a per-step shift of the emission log-probabilities, so
likelihoods stay finite for sequences up to at least 1e5 frames.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import (
    DegenerateData,
    DimensionMismatch,
    EmptyInput,
    MissingChannel,
    MissingGroup,
)
from .features import ChannelId, ChannelSet, NormStats, UNNORMALIZED, channel_by_name, fit_norm
from .ingest import GROUPS
from .util import parallel_map

log = logging.getLogger(__name__)

MODEL_FORMAT = "hmm-gmm"
MODEL_VERSION = 1

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class HmmParams:
    n_states: int = 8
    n_mix: int = 4
    cov_floor: float = 1e-4
    max_em_iter: int = 100
    em_tol: float = 1e-4
    #: Divide log-likelihoods by sequence length before comparing groups.
    per_frame: bool = True

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_mix": self.n_mix,
            "cov_floor": self.cov_floor,
            "max_em_iter": self.max_em_iter,
            "em_tol": self.em_tol,
            "per_frame": self.per_frame,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        return cls(
            n_states=int(d["n_states"]),
            n_mix=int(d["n_mix"]),
            cov_floor=float(d["cov_floor"]),
            max_em_iter=int(d["max_em_iter"]),
            em_tol=float(d["em_tol"]),
            per_frame=bool(d["per_frame"]),
        )


@dataclass
class GroupHmm:
    group: int
    initial: np.ndarray        # (N,)
    transition: np.ndarray     # (N, N) row-stochastic
    weights: np.ndarray        # (N, M) simplex rows
    means: np.ndarray          # (N, M, D)
    variances: np.ndarray      # (N, M, D) diagonal, floored

    @property
    def dim(self) -> int:
        return self.means.shape[2]


@dataclass
class HmmModel:
    models: dict[int, GroupHmm]
    selected: list[ChannelId]
    norm: NormStats
    params: HmmParams
    meta: dict = field(default_factory=dict)


def stack_observation(
    cs: ChannelSet, selected: list[ChannelId], norm: NormStats
) -> np.ndarray:
    """Stack the selected channels into an (L, D) observation matrix.

    Columns follow the selection order; all channels except the binary
    ones are z-scored with the training statistics.
    """
    if not selected:
        raise EmptyInput("no channels selected")
    cols = []
    for ch in selected:
        if ch not in cs.channels:
            raise MissingChannel(f"channel {ch.name} missing from input")
        v = cs.channels[ch]
        if ch not in UNNORMALIZED:
            v = (v - norm.mean[ch]) / norm.std[ch]
        cols.append(np.asarray(v, dtype=np.float64))
    return np.column_stack(cols)


# --- scaled forward/backward kernels ---

@nb.njit(cache=True, nogil=True)
def _forward_pass(init, trans, logb):
    """Scaled forward recursion; alpha rows sum to one, logc holds the scale."""
    L, N = logb.shape
    alpha = np.zeros((L, N))
    logc = np.zeros(L)
    m = np.max(logb[0])
    s = 0.0
    for i in range(N):
        val = init[i] * math.exp(logb[0, i] - m)
        alpha[0, i] = val
        s += val
    if s <= 0.0:
        return alpha, logc, -np.inf
    for i in range(N):
        alpha[0, i] /= s
    logc[0] = math.log(s) + m
    for t in range(1, L):
        m = np.max(logb[t])
        s = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * trans[i, j]
            val = acc * math.exp(logb[t, j] - m)
            alpha[t, j] = val
            s += val
        if s <= 0.0:
            return alpha, logc, -np.inf
        for j in range(N):
            alpha[t, j] /= s
        logc[t] = math.log(s) + m
    return alpha, logc, logc.sum()


@nb.njit(cache=True, nogil=True)
def _forward_loglik(init, trans, logb):
    L, N = logb.shape
    prev = np.zeros(N)
    cur = np.zeros(N)
    m = np.max(logb[0])
    s = 0.0
    for i in range(N):
        prev[i] = init[i] * math.exp(logb[0, i] - m)
        s += prev[i]
    if s <= 0.0:
        return -np.inf
    total = math.log(s) + m
    for i in range(N):
        prev[i] /= s
    for t in range(1, L):
        m = np.max(logb[t])
        s = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += prev[i] * trans[i, j]
            cur[j] = acc * math.exp(logb[t, j] - m)
            s += cur[j]
        if s <= 0.0:
            return -np.inf
        total += math.log(s) + m
        for j in range(N):
            prev[j] = cur[j] / s
    return total


@nb.njit(cache=True, nogil=True)
def _backward_pass(trans, logb, logc):
    """Backward recursion scaled to match _forward_pass."""
    L, N = logb.shape
    beta = np.zeros((L, N))
    for i in range(N):
        beta[L - 1, i] = 1.0
    for t in range(L - 2, -1, -1):
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += trans[i, j] * math.exp(logb[t + 1, j] - logc[t + 1]) * beta[t + 1, j]
            beta[t, i] = acc
    return beta


@nb.njit(cache=True, nogil=True)
def _xi_accumulate(alpha, beta, trans, logb, logc):
    """Summed transition posteriors over all steps of one sequence."""
    L, N = logb.shape
    out = np.zeros((N, N))
    for t in range(L - 1):
        for j in range(N):
            w = math.exp(logb[t + 1, j] - logc[t + 1]) * beta[t + 1, j]
            for i in range(N):
                out[i, j] += alpha[t, i] * trans[i, j] * w
    return out


def _emission_logprob(
    obs: np.ndarray, gh: GroupHmm, with_components: bool = True
) -> tuple[np.ndarray | None, np.ndarray]:
    """Per-frame log densities: component-wise (L,N,M) and state-wise (L,N)."""
    x = obs[:, None, None, :]                      # (L,1,1,D)
    var = gh.variances[None, :, :, :]              # (1,N,M,D)
    mean = gh.means[None, :, :, :]
    ll = -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var).sum(axis=3)
    with np.errstate(divide="ignore"):
        comp = ll + np.log(gh.weights)[None, :, :]
    m = comp.max(axis=2, keepdims=True)
    logb = m[:, :, 0] + np.log(np.exp(comp - m).sum(axis=2))
    return (comp if with_components else None), logb


def score(gh: GroupHmm, obs: np.ndarray, per_frame: bool = True) -> float:
    """Forward log-likelihood of an observation matrix under one group model."""
    obs = np.ascontiguousarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise EmptyInput("observation matrix must be non-empty and 2-D")
    if obs.shape[1] != gh.dim:
        raise DimensionMismatch(f"observation dim {obs.shape[1]} != model dim {gh.dim}")
    _, logb = _emission_logprob(obs, gh, with_components=False)
    ll = float(_forward_loglik(gh.initial, gh.transition, logb))
    return ll / obs.shape[0] if per_frame else ll


def _kmeanspp(frames: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic k-means++ seeding of k centers from pooled frames."""
    n = frames.shape[0]
    centers = np.empty((k, frames.shape[1]))
    centers[0] = frames[int(rng.integers(n))]
    d2 = ((frames - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0.0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centers[c] = frames[pick]
        d2 = np.minimum(d2, ((frames - centers[c]) ** 2).sum(axis=1))
    return centers


def _init_group(
    group: int, obs_list: list[np.ndarray], params: HmmParams, rng: np.random.Generator
) -> GroupHmm:
    frames = np.concatenate(obs_list, axis=0)
    dim = frames.shape[1]
    pooled_var = frames.var(axis=0)
    if np.all(pooled_var <= 0.0):
        raise DegenerateData(f"group {group}: pooled frames have zero variance everywhere")
    n, m = params.n_states, params.n_mix
    # One k-means++ run seeds all N*M component means; consecutive blocks of
    # M centers go to consecutive states, which breaks the state symmetry
    # that uniform initial/transition matrices would otherwise never escape.
    centers = _kmeanspp(frames, n * m, rng)
    variances = np.tile(np.maximum(pooled_var, params.cov_floor), (n, m, 1))
    return GroupHmm(
        group=group,
        initial=np.full(n, 1.0 / n),
        transition=np.full((n, n), 1.0 / n),
        weights=np.full((n, m), 1.0 / m),
        means=centers.reshape(n, m, dim),
        variances=variances,
    )


class _EStats:
    def __init__(self, n: int, m: int, d: int) -> None:
        self.init_acc = np.zeros(n)
        self.xi_acc = np.zeros((n, n))
        self.gamma_acc = np.zeros(n)
        self.resp_acc = np.zeros((n, m))
        self.rx_acc = np.zeros((n, m, d))
        self.rxx_acc = np.zeros((n, m, d))
        self.loglik = 0.0


def _e_step(gh: GroupHmm, obs_list: list[np.ndarray]) -> _EStats:
    n, m, d = gh.means.shape
    stats = _EStats(n, m, d)
    for obs in obs_list:
        comp, logb = _emission_logprob(obs, gh)
        alpha, logc, ll = _forward_pass(gh.initial, gh.transition, logb)
        if not np.isfinite(ll):
            raise DegenerateData(f"group {gh.group}: sequence has zero likelihood")
        beta = _backward_pass(gh.transition, logb, logc)
        gamma = alpha * beta                               # (L,N), rows sum to 1
        stats.loglik += ll
        stats.init_acc += gamma[0]
        if obs.shape[0] > 1:
            stats.xi_acc += _xi_accumulate(alpha, beta, gh.transition, logb, logc)
        stats.gamma_acc += gamma.sum(axis=0)
        post = np.exp(comp - logb[:, :, None])             # mixture posteriors
        resp = gamma[:, :, None] * post                    # (L,N,M)
        stats.resp_acc += resp.sum(axis=0)
        stats.rx_acc += np.einsum("lnm,ld->nmd", resp, obs)
        stats.rxx_acc += np.einsum("lnm,ld->nmd", resp, obs * obs)
    return stats


def _m_step(gh: GroupHmm, stats: _EStats, params: HmmParams) -> tuple[GroupHmm, int]:
    n, m, _ = gh.means.shape
    initial = stats.init_acc / stats.init_acc.sum()
    transition = gh.transition.copy()
    for i in range(n):
        row = stats.xi_acc[i]
        total = row.sum()
        if total > 0.0:
            transition[i] = row / total
    weights = gh.weights.copy()
    means = gh.means.copy()
    variances = gh.variances.copy()
    for s in range(n):
        occupancy = stats.gamma_acc[s]
        if occupancy <= 0.0:
            continue
        w = stats.resp_acc[s] / occupancy
        total = w.sum()
        if total > 0.0:
            weights[s] = w / total
        for j in range(m):
            r = stats.resp_acc[s, j]
            if r > 1e-12:
                mu = stats.rx_acc[s, j] / r
                means[s, j] = mu
                variances[s, j] = stats.rxx_acc[s, j] / r - mu * mu
    floored = int((variances < params.cov_floor).sum())
    if floored:
        log.warning("group %d: %d variance entries floored at %g", gh.group, floored, params.cov_floor)
    variances = np.maximum(variances, params.cov_floor)
    return (
        GroupHmm(
            group=gh.group,
            initial=initial,
            transition=transition,
            weights=weights,
            means=means,
            variances=variances,
        ),
        floored,
    )


def _fit_group(
    group: int, obs_list: list[np.ndarray], params: HmmParams, seed: int
) -> tuple[GroupHmm, dict]:
    rng = np.random.default_rng([seed, group])
    gh = _init_group(group, obs_list, params, rng)
    history: list[float] = []
    floor_events = 0
    prev_ll: float | None = None
    for _ in range(params.max_em_iter):
        stats = _e_step(gh, obs_list)
        history.append(stats.loglik)
        if prev_ll is not None and stats.loglik - prev_ll < params.em_tol:
            break
        gh, floored = _m_step(gh, stats, params)
        floor_events += floored
        prev_ll = stats.loglik
    meta = {
        "iterations": len(history),
        "loglik_history": history,
        "floor_events": floor_events,
    }
    return gh, meta


def fit_hmm(
    observations: list[np.ndarray],
    params: HmmParams = HmmParams(),
    seed: int = 0,
    group: int = GROUPS[0],
) -> tuple[GroupHmm, dict]:
    """Fit a single model on raw observation matrices (no grouping, no norm)."""
    if not observations:
        raise EmptyInput("no observation matrices")
    obs_list = [np.ascontiguousarray(o, dtype=np.float64) for o in observations]
    return _fit_group(group, obs_list, params, seed)


def train_hmm(
    train: list[tuple[ChannelSet, int]],
    selected: list[ChannelId],
    params: HmmParams = HmmParams(),
    norm: NormStats | None = None,
    seed: int = 0,
    jobs: int | None = None,
) -> HmmModel:
    """Fit one Gaussian-mixture HMM per group with Baum-Welch.

    Initialization is deterministic for a fixed seed: uniform initial and
    transition probabilities, component means from k-means++ over the
    group's pooled frames, pooled per-dimension variances, uniform mixture
    weights. EM stops when the joint log-likelihood improves by less than
    em_tol or after max_em_iter iterations; variances are floored at
    cov_floor after every M-step (floor events are logged).
    """
    if not selected:
        raise EmptyInput("no channels selected")
    by_group: dict[int, list[ChannelSet]] = {g: [] for g in GROUPS}
    for cs, group in train:
        if group not in by_group:
            raise MissingGroup(f"group label {group} outside {GROUPS}")
        by_group[group].append(cs)
    for g in GROUPS:
        if len(by_group[g]) < 2:
            raise MissingGroup(f"group {g} has {len(by_group[g])} training sessions; need >= 2")
    if norm is None:
        norm = fit_norm([cs for cs, _ in train])

    obs_by_group = {
        g: [stack_observation(cs, selected, norm) for cs in sets]
        for g, sets in by_group.items()
    }

    def fit(g: int) -> tuple[int, GroupHmm, dict]:
        gh, meta = _fit_group(g, obs_by_group[g], params, seed)
        return g, gh, meta

    results = parallel_map(fit, GROUPS, jobs)
    models = {g: gh for g, gh, _ in results}
    meta = {"groups": {str(g): m for g, _, m in results}}
    return HmmModel(models=models, selected=list(selected), norm=norm, params=params, meta=meta)


def classify_hmm(model: HmmModel, cs: ChannelSet) -> tuple[int, dict[int, float]]:
    """Most likely group for one session; ties go to the lower group index."""
    obs = stack_observation(cs, model.selected, model.norm)
    scores = {
        g: score(model.models[g], obs, per_frame=model.params.per_frame) for g in GROUPS
    }
    best = GROUPS[0]
    for g in GROUPS[1:]:
        if scores[g] > scores[best]:
            best = g
    return best, scores


def hmm_to_dict(model: HmmModel) -> dict:
    groups = {}
    for g in GROUPS:
        gh = model.models[g]
        groups[str(g)] = {
            "initial": gh.initial.tolist(),
            "transition": gh.transition.tolist(),
            "weights": gh.weights.tolist(),
            "means": gh.means.tolist(),
            "variances": gh.variances.tolist(),
        }
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": model.params.to_dict(),
        "selected": [ch.name for ch in model.selected],
        "norm": model.norm.to_dict(),
        "groups": groups,
        "meta": model.meta,
    }


def hmm_from_dict(d: dict) -> HmmModel:
    params = HmmParams.from_dict(d["params"])
    selected = [channel_by_name(name) for name in d["selected"]]
    norm = NormStats.from_dict(d["norm"])
    models = {}
    for g_txt, payload in d["groups"].items():
        g = int(g_txt)
        models[g] = GroupHmm(
            group=g,
            initial=np.asarray(payload["initial"], dtype=np.float64),
            transition=np.asarray(payload["transition"], dtype=np.float64),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            means=np.asarray(payload["means"], dtype=np.float64),
            variances=np.asarray(payload["variances"], dtype=np.float64),
        )
    return HmmModel(
        models=models,
        selected=selected,
        norm=norm,
        params=params,
        meta=dict(d.get("meta", {})),
    )
