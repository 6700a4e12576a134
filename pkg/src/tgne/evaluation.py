"""Reconstruction benchmark (scorers + AUC) and uncertainty analytics.

The reconstruction task asks, for every pair in a split and every interval,
whether the pair interacts inside that interval. Each active (pair, interval)
triplet becomes a positive instance and draws one matched negative uniformly
from the node pairs inactive in that interval; scorers then rank the
instances and are compared by AUC.

Uncertainty analytics summarize the fitted posterior: per-node scales u(i,k),
posterior-predictive spread of cumulative rates across configuration draws,
and its regression against interaction counts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .events import CountTensor, EventList, IntervalPartition, Pair, canonical_pair
from .inference import FittedModel, VariationalState
from .model import EUCLIDEAN, _closed_rate_batch, _riemann_rate_batch


@dataclass
class ScoredInstance:
    """One (pair, interval) classification instance; label 1 iff active."""

    i: int
    j: int
    k: int
    score: float = float("nan")
    label: int = 0


def restrict_counts(counts: CountTensor, pairs: Iterable[Pair]) -> CountTensor:
    """Counts filtered down to the given pairs (train-only views)."""
    keep = {canonical_pair(a, b, counts.directed) for a, b in pairs}
    sub = {key: c for key, c in counts.counts.items() if (key[0], key[1]) in keep}
    return CountTensor(n=counts.n, K=counts.K, directed=counts.directed, counts=sub)


def build_instances(
    counts: CountTensor,
    pairs: Iterable[Pair],
    part: IntervalPartition,
    seed: int = 0,
) -> tuple[list[ScoredInstance], dict[int, int]]:
    """Positives from one split, with 1:1 matched negatives per interval.

    Every pair of the split that is active in interval k yields a positive;
    each positive draws one negative uniformly (without replacement within
    the interval) from the node-pair universe restricted to pairs with no
    event in that interval. Returns the instances plus a per-interval
    shortfall count for intervals whose negatives ran out.
    """
    pair_list = sorted(canonical_pair(a, b, counts.directed) for a, b in pairs)
    n = counts.n
    universe = n * (n - 1) if counts.directed else n * (n - 1) // 2
    active_by_k: dict[int, set[Pair]] = {k: set() for k in range(1, part.K + 1)}
    for (a, b, k), _c in counts.counts.items():
        active_by_k[k].add((a, b))

    rng = np.random.default_rng(seed)
    instances: list[ScoredInstance] = []
    shortfall: dict[int, int] = {}
    for k in range(1, part.K + 1):
        positives = [p for p in pair_list if counts.count(p[0], p[1], k) >= 1]
        for i, j in positives:
            instances.append(ScoredInstance(i=i, j=j, k=k, label=1))
        active = active_by_k[k]
        n_inactive = universe - len(active)
        take = min(len(positives), n_inactive)
        if take < len(positives):
            shortfall[k] = len(positives) - take
        chosen: set[Pair] = set()
        if take and n_inactive <= 4 * take:
            # dense interval: enumerate the inactive pairs and sample directly
            inactive = [
                (i, j)
                for i in range(n)
                for j in (range(n) if counts.directed else range(i + 1, n))
                if i != j and (i, j) not in active
            ]
            picks = rng.choice(len(inactive), size=take, replace=False)
            chosen = {inactive[c] for c in picks.tolist()}
        else:
            # sparse interval: rejection-sample uniform inactive pairs
            while len(chosen) < take:
                i = int(rng.integers(n))
                j = int(rng.integers(n))
                if i == j:
                    continue
                p = canonical_pair(i, j, counts.directed)
                if p in active or p in chosen:
                    continue
                chosen.add(p)
        for i, j in sorted(chosen):
            instances.append(ScoredInstance(i=i, j=j, k=k, label=0))
    return instances, shortfall


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(instances: Sequence[ScoredInstance]) -> float:
    scores = np.asarray([inst.score for inst in instances])
    labels = np.asarray([inst.label for inst in instances])
    return auc_from_scores(scores, labels)


def _lambda_batch(z, beta, kind, part, ii, jj, kk0, riemann_r=10):
    """Cumulative rates for triplet arrays (0-based interval index)."""
    lengths = part.lengths[kk0]
    zi_a = z[ii, kk0, :]
    zi_b = z[ii, kk0 + 1, :]
    zj_a = z[jj, kk0, :]
    zj_b = z[jj, kk0 + 1, :]
    if kind == EUCLIDEAN:
        lam, _, _ = _closed_rate_batch(zi_a - zj_a, zi_b - zj_b, beta, lengths)
    else:
        lam, _ = _riemann_rate_batch(zi_a, zi_b, zj_a, zj_b, beta, lengths, riemann_r, kind)
    return lam


def score_tgne(fm: FittedModel, i: int, j: int, k: int) -> float:
    """Expected interactions Lambda_ij(I_k) at the posterior-mean trajectories."""
    lam = _lambda_batch(
        fm.state.mu, fm.state.beta, fm.hyper.rate_model, fm.part,
        np.asarray([i]), np.asarray([j]), np.asarray([k - 1]),
        fm.hyper.riemann_r,
    )
    return float(lam[0])


def score_tgne_many(fm: FittedModel, ii, jj, kk) -> np.ndarray:
    return _lambda_batch(
        fm.state.mu, fm.state.beta, fm.hyper.rate_model, fm.part,
        np.asarray(ii), np.asarray(jj), np.asarray(kk) - 1, fm.hyper.riemann_r,
    )


def score_tgne_predictive(
    fm: FittedModel, i: int, j: int, k: int, B: int = 200, seed: int = 0
) -> float:
    """Posterior-predictive mean of Lambda_ij(I_k) over B configuration draws."""
    mean, _ = edge_uncertainty(fm.state, fm.hyper.rate_model, fm.part, i, j, k, B, seed)
    return mean


@dataclass
class LsdmOpts:
    """Optimizer settings for the per-interval binary latent distance fit."""

    iters: int = 800
    lr: float = 0.05
    init_scale: float = 0.1
    seed: int = 0
    grad_tol: float = 1e-4


@dataclass(eq=False)
class LsdmModel:
    z: np.ndarray  # (n, d)
    beta: float
    nll_trace: np.ndarray
    converged: bool


def _lsdm_nll_grad(z: np.ndarray, beta: float, ii, jj, y):
    """Bernoulli NLL of p = logistic(beta - dist^2) and its exact gradient."""
    diff = z[ii] - z[jj]
    logits = beta - np.einsum("pd,pd->p", diff, diff)
    p = expit(logits)
    nll = float(-(y * np.log(p + 1e-300) + (1 - y) * np.log(1 - p + 1e-300)).sum())
    resid = p - y
    g_pair = -2.0 * resid[:, None] * diff
    g_z = np.zeros_like(z)
    np.add.at(g_z, ii, g_pair)
    np.add.at(g_z, jj, -g_pair)
    return nll, g_z, float(resid.sum())


def fit_lsdm(
    counts: CountTensor,
    train_pairs: Iterable[Pair],
    k: int,
    d: int,
    opts: Optional[LsdmOpts] = None,
) -> LsdmModel:
    """Fit a static binary latent distance model to one interval.

    Maximizes the Bernoulli likelihood of y_ij = 1{N_ij(I_k) >= 1} over the
    training pairs, with p = logistic(beta - ||z_i - z_j||^2), by
    adaptive-moment gradient steps. No temporal coupling: every interval is
    fit independently. Returns the best iterate; warns on non-convergence.
    """
    opts = opts or LsdmOpts()
    pair_list = sorted(canonical_pair(a, b, counts.directed) for a, b in train_pairs)
    if not pair_list:
        raise ValueError("need at least one training pair")
    ii = np.asarray([p[0] for p in pair_list])
    jj = np.asarray([p[1] for p in pair_list])
    y = np.asarray([1.0 if counts.count(a, b, k) >= 1 else 0.0 for a, b in pair_list])

    rng = np.random.default_rng(opts.seed)
    n = counts.n
    z = opts.init_scale * rng.standard_normal((n, d))
    beta = 0.0

    m_z = np.zeros_like(z)
    v_z = np.zeros_like(z)
    m_b = v_b = 0.0
    b1, b2, eps_adam = 0.9, 0.999, 1e-8

    best = (np.inf, z.copy(), beta)
    trace = np.empty(opts.iters)
    grad_inf = np.inf
    for t in range(1, opts.iters + 1):
        nll, g_z, g_b = _lsdm_nll_grad(z, beta, ii, jj, y)
        trace[t - 1] = nll
        if nll < best[0]:
            best = (nll, z.copy(), beta)
        grad_inf = max(np.abs(g_z).max(), abs(g_b))

        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        m_z = b1 * m_z + (1 - b1) * g_z
        v_z = b2 * v_z + (1 - b2) * g_z * g_z
        z = z - opts.lr * (m_z / bc1) / (np.sqrt(v_z / bc2) + eps_adam)
        m_b = b1 * m_b + (1 - b1) * g_b
        v_b = b2 * v_b + (1 - b2) * g_b * g_b
        beta = beta - opts.lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + eps_adam)

    converged = grad_inf < opts.grad_tol
    if not converged:
        warnings.warn(
            f"interval {k}: distance-model fit stopped at max iterations "
            f"(grad inf-norm {grad_inf:.3g}); returning best iterate",
            RuntimeWarning,
        )
    _, z_best, beta_best = best
    return LsdmModel(z=z_best, beta=beta_best, nll_trace=trace, converged=converged)


def lsdm_score(model: LsdmModel, i: int, j: int) -> float:
    diff = model.z[i] - model.z[j]
    return float(expit(model.beta - diff @ diff))


def score_pa(counts_train: CountTensor, i: int, j: int, k: int) -> float:
    """Preferential attachment: product of train-degrees in the interval."""
    return float(counts_train.degree(i, k) * counts_train.degree(j, k))


def score_random(rng: np.random.Generator) -> float:
    return float(rng.random())


def node_uncertainty(vs: VariationalState, i: int, k: int) -> float:
    """u(i,k): mean of the interval's two endpoint scales (k 1-based)."""
    K = vs.log_sigma.shape[1] - 1
    if not 1 <= k <= K:
        raise ValueError(f"interval index must be in 1..{K}, got {k}")
    sigma = vs.sigma
    return float(0.5 * (sigma[i, k - 1] + sigma[i, k]))


def neighbor_distance(
    fm: FittedModel, counts: CountTensor, i: int, k: int
) -> Optional[float]:
    """Mean distance to interval-k neighbors at the interval midpoint.

    Positions are the mean trajectories interpolated at the midpoint; returns
    None when the node has no neighbors in the interval (undefined).
    """
    neighbors = [
        j for j in range(counts.n) if j != i and counts.count(i, j, k) >= 1
    ]
    if not neighbors:
        return None
    mid = 0.5 * (fm.state.mu[:, k - 1, :] + fm.state.mu[:, k, :])
    dists = np.linalg.norm(mid[neighbors] - mid[i], axis=1)
    return float(dists.mean())


def _posterior_lambda_draws(
    vs: VariationalState,
    rm_kind: str,
    part: IntervalPartition,
    ii: np.ndarray,
    jj: np.ndarray,
    kk0: np.ndarray,
    B: int,
    seed: int,
    riemann_r: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std of Lambda over B shared configuration draws."""
    rng = np.random.default_rng(seed)
    sigma3 = vs.sigma[:, :, None]
    total = np.zeros(ii.shape[0])
    total_sq = np.zeros(ii.shape[0])
    for _ in range(B):
        z = vs.mu + sigma3 * rng.standard_normal(vs.mu.shape)
        lam = _lambda_batch(z, vs.beta, rm_kind, part, ii, jj, kk0, riemann_r)
        total += lam
        total_sq += lam * lam
    mean = total / B
    var = np.maximum(total_sq / B - mean * mean, 0.0)
    return mean, np.sqrt(var)


def edge_uncertainty(
    vs: VariationalState,
    rm_kind: str,
    part: IntervalPartition,
    i: int,
    j: int,
    k: int,
    B: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Posterior-predictive mean and std (divisor B) of Lambda_ij(I_k)."""
    if B < 2:
        raise ValueError("B must be >= 2")
    mean, std = _posterior_lambda_draws(
        vs, rm_kind, part, np.asarray([i]), np.asarray([j]), np.asarray([k - 1]), B, seed
    )
    return float(mean[0]), float(std[0])


def regression_slope_from_points(
    n_values: np.ndarray, stds: np.ndarray, per_unique_n: bool = True
) -> float:
    """OLS slope of uncertainty against interaction count.

    With ``per_unique_n`` the regression points are the mean std over each
    unique count value (one point per distinct N); otherwise the raw points.
    """
    n_values = np.asarray(n_values, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    if np.unique(n_values).size < 2:
        raise ValueError("regression needs at least two distinct interaction counts")
    if per_unique_n:
        xs = np.unique(n_values)
        ys = np.asarray([stds[n_values == x].mean() for x in xs])
    else:
        xs, ys = n_values, stds
    slope, _intercept = np.polyfit(xs, ys, 1)
    return float(slope)


def uncertainty_regression(
    vs: VariationalState,
    counts: CountTensor,
    rm_kind: str,
    part: IntervalPartition,
    B: int = 200,
    seed: int = 0,
    per_unique_n: bool = True,
) -> float:
    """OLS slope of posterior Std(Lambda_ij(I_k)) against N_ij(I_k).

    The population is every (pair, interval) with the pair taken from the
    given counts (pass a train-restricted tensor to stay on training data),
    including the pair's zero-count intervals. By default the regression runs
    on per-unique-N averages of the std; ``per_unique_n=False`` uses the raw
    (N, std) points instead.
    """
    pairs = sorted(counts.active_pairs())
    if not pairs:
        raise ValueError("counts contain no active pairs")
    P = len(pairs)
    K = part.K
    ii = np.asarray([p[0] for p in pairs]).repeat(K)
    jj = np.asarray([p[1] for p in pairs]).repeat(K)
    kk0 = np.tile(np.arange(K), P)
    _, stds = _posterior_lambda_draws(vs, rm_kind, part, ii, jj, kk0, B, seed)
    n_events = np.asarray(
        [counts.count(a, b, k0 + 1) for a, b, k0 in zip(ii, jj, kk0)], dtype=np.float64
    )
    return regression_slope_from_points(n_events, stds, per_unique_n=per_unique_n)


@dataclass
class RateRecord:
    """One row of the rate-vs-uncertainty table."""

    i: int
    j: int
    t: float
    k: int
    is_negative: bool
    rate: float
    rate_std: float
    n_events: int


def rate_vs_uncertainty_table(
    ev: EventList,
    vs: VariationalState,
    rm_kind: str,
    part: IntervalPartition,
    B: int = 200,
    seed: int = 0,
) -> list[RateRecord]:
    """Per-event rates and posterior rate spread, with matched negatives.

    For each event (i, j, t) two records are emitted: the event itself and a
    negative with the destination swapped to a uniform random node j' with
    j' != i and (i, j') != (i, j). ``rate`` is lambda at the posterior-mean
    configuration; ``rate_std`` is the population std over B posterior draws;
    ``n_events`` tags the record's pair count in the containing interval.
    """
    if ev.m == 0:
        return []
    from .events import interval_counts  # local import to avoid cycle at module load

    counts = interval_counts(ev, part)
    rng = np.random.default_rng(seed)
    k1, s = part.local_coord(ev.time)
    k1 = np.atleast_1d(k1)
    s = np.atleast_1d(s)

    # negatives: swap destination, avoiding i and the original pair
    neg_j = np.empty(ev.m, dtype=np.int64)
    for m, (i, j) in enumerate(zip(ev.src.tolist(), ev.dst.tolist())):
        choices = [x for x in range(ev.n) if x not in (i, j)]
        neg_j[m] = choices[int(rng.integers(len(choices)))]

    ii = np.concatenate([ev.src, ev.src])
    jj = np.concatenate([ev.dst, neg_j])
    tt = np.concatenate([ev.time, ev.time])
    kk0 = np.concatenate([k1 - 1, k1 - 1])
    ss = np.concatenate([s, s])
    is_neg = np.concatenate([np.zeros(ev.m, bool), np.ones(ev.m, bool)])

    def rates_at(z):
        om = (1.0 - ss)[:, None]
        sc = ss[:, None]
        pi = om * z[ii, kk0, :] + sc * z[ii, kk0 + 1, :]
        pj = om * z[jj, kk0, :] + sc * z[jj, kk0 + 1, :]
        if rm_kind == EUCLIDEAN:
            diff = pi - pj
            return np.exp(vs.beta - np.einsum("md,md->m", diff, diff))
        return np.exp(vs.beta + np.einsum("md,md->m", pi, pj))

    rate_mean_cfg = rates_at(vs.mu)
    sigma3 = vs.sigma[:, :, None]
    total = np.zeros(ii.shape[0])
    total_sq = np.zeros(ii.shape[0])
    for _ in range(B):
        z = vs.mu + sigma3 * rng.standard_normal(vs.mu.shape)
        lam = rates_at(z)
        total += lam
        total_sq += lam * lam
    mean_b = total / B
    std = np.sqrt(np.maximum(total_sq / B - mean_b * mean_b, 0.0))

    records = []
    for m in range(ii.shape[0]):
        i, j, k = int(ii[m]), int(jj[m]), int(kk0[m]) + 1
        records.append(
            RateRecord(
                i=i,
                j=j,
                t=float(tt[m]),
                k=k,
                is_negative=bool(is_neg[m]),
                rate=float(rate_mean_cfg[m]),
                rate_std=float(std[m]),
                n_events=counts.count(i, j, k),
            )
        )
    return records


SCORER_NAMES = ("tgne", "tgne_predictive", "lsdm", "pa", "random")


def score_instances(
    instances: list[ScoredInstance],
    scorer: str,
    fm: Optional[FittedModel] = None,
    train_counts: Optional[CountTensor] = None,
    lsdm_models: Optional[dict[int, LsdmModel]] = None,
    seed: int = 0,
    B: int = 200,
) -> list[ScoredInstance]:
    """Return a copy of the instances scored by the named scorer."""
    if scorer not in SCORER_NAMES:
        raise ValueError(f"unknown scorer {scorer!r}; choose from {SCORER_NAMES}")
    out = [replace(inst) for inst in instances]
    if not out:
        return out
    ii = np.asarray([inst.i for inst in out])
    jj = np.asarray([inst.j for inst in out])
    kk = np.asarray([inst.k for inst in out])
    if scorer == "tgne":
        scores = score_tgne_many(fm, ii, jj, kk)
    elif scorer == "tgne_predictive":
        scores, _ = _posterior_lambda_draws(
            fm.state, fm.hyper.rate_model, fm.part, ii, jj, kk - 1, B, seed,
            fm.hyper.riemann_r,
        )
    elif scorer == "lsdm":
        scores = np.asarray(
            [lsdm_score(lsdm_models[int(k)], int(i), int(j)) for i, j, k in zip(ii, jj, kk)]
        )
    elif scorer == "pa":
        scores = np.asarray(
            [score_pa(train_counts, int(i), int(j), int(k)) for i, j, k in zip(ii, jj, kk)]
        )
    else:
        rng = np.random.default_rng(seed)
        scores = rng.random(len(out))
    for inst, sc in zip(out, scores):
        inst.score = float(sc)
    return out
