"""Piecewise-linear latent trajectories and the Poisson-process likelihood.

Each node i follows a trajectory that is linear on every interval I_k of the
partition, fully determined by its critical points z_i^(k) at the cut-points.
A pair (i, j) interacts as an inhomogeneous Poisson process whose log rate is
either

* ``euclidean``:  log lambda_ij(t) = beta - ||z_i(t) - z_j(t)||^2, or
* ``dot``:        log lambda_ij(t) = beta + <z_i(t), z_j(t)>.

For the euclidean model the cumulative rate over an interval has a closed
form: on I_k the squared distance is a quadratic gamma(s) = a + (s-mu)^2 /
(2 sigma^2) in the local coordinate s, so the integral reduces to a Gaussian
mass sigma*sqrt(2pi)*[Phi((1-mu)/sigma) - Phi(-mu/sigma)] scaled by
|I_k|*exp(beta - a). Gradients reuse the same machinery through truncated
Gaussian moment integrals, so both value and gradient are exact up to the
accuracy of erfc. The dot-product model integrates by a left Riemann sum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import erfc

from .events import EventList, IntervalPartition, canonical_pair

SQRT_2PI = np.sqrt(2.0 * np.pi)
INV_SQRT2 = 1.0 / np.sqrt(2.0)

# below this ||delta_a - delta_b|| the quadratic term of gamma is < 1e-18 and
# the closed form would divide by ~0; switch to the exact linear-exponent path
EPS_DEGENERATE = 1e-9

EUCLIDEAN = "euclidean"
DOT = "dot"
_KINDS = (EUCLIDEAN, DOT)


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) * INV_SQRT2)


def _normal_cdf_diff(u0, u1):
    """Phi(u1) - Phi(u0) for u1 >= u0, stable in both tails.

    The plain erfc(-u) form is accurate everywhere except when both
    arguments sit in the far right tail, where the complementary form
    erfc(u0) - erfc(u1) avoids cancellation.
    """
    base = 0.5 * (erfc(-u1 * INV_SQRT2) - erfc(-u0 * INV_SQRT2))
    tail = 0.5 * (erfc(u0 * INV_SQRT2) - erfc(u1 * INV_SQRT2))
    return np.where(u0 > 6.0, tail, base)


def _exp_linear_integrals(c):
    """E_m(c) = integral_0^1 t^m exp(-c t) dt for m = 0, 1.

    Series fallback near c = 0 keeps both integrals accurate to ~1e-16.
    """
    c = np.asarray(c, dtype=np.float64)
    small = np.abs(c) < 1e-4
    c_safe = np.where(small, 1.0, c)
    emc = np.exp(-c)
    e0_direct = -np.expm1(-c) / c_safe
    e1_direct = (e0_direct - emc) / c_safe
    e0_series = 1.0 - c / 2.0 + c * c / 6.0 - c * c * c / 24.0
    e1_series = 0.5 - c / 3.0 + c * c / 8.0 - c * c * c / 30.0
    return np.where(small, e0_series, e0_direct), np.where(small, e1_series, e1_direct)


@dataclass(frozen=True)
class RateModel:
    """Similarity kind plus the global bias beta of the log rate."""

    kind: str
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")


@dataclass(eq=False)
class LatentConfiguration:
    """Critical points z of shape (n, K+1, d) over a partition."""

    z: np.ndarray
    part: IntervalPartition

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 3:
            raise ValueError("z must have shape (n, K+1, d)")
        if self.z.shape[1] != self.part.K + 1:
            raise ValueError(
                f"z has {self.z.shape[1]} cut-points but partition has {self.part.K + 1}"
            )
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent positions must be finite")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def K(self) -> int:
        return self.z.shape[1] - 1

    @property
    def d(self) -> int:
        return self.z.shape[2]


def position_at(cfg: LatentConfiguration, i: int, t: float) -> np.ndarray:
    """Trajectory position z_i(t), linear within the containing interval."""
    k, s = cfg.part.local_coord(t)
    return (1.0 - s) * cfg.z[i, k - 1] + s * cfg.z[i, k]


def log_rate(cfg: LatentConfiguration, rm: RateModel, i: int, j: int, t: float) -> float:
    """log lambda_ij(t) under the rate model."""
    if i == j:
        raise ValueError("log_rate is undefined for i == j")
    pi = position_at(cfg, i, t)
    pj = position_at(cfg, j, t)
    if rm.kind == EUCLIDEAN:
        diff = pi - pj
        return float(rm.beta - diff @ diff)
    return float(rm.beta + pi @ pj)


def _closed_rate_batch(da, db, beta, lengths, want_grad=False):
    """Cumulative euclidean rate for batched interval endpoints.

    ``da``/``db`` are the pair position differences at the interval start and
    end, shape (..., d); ``lengths`` broadcast over the leading shape. Returns
    Lambda (...) and, when ``want_grad``, the exact gradients with respect to
    da and db, via the truncated Gaussian moments

        A_m = |I| * exp(beta - a) * integral_0^1 s^m exp(-(s-mu)^2/(2 sigma^2)) ds

        dLambda/d da = -2 [ da (A0 - 2 A1 + A2) + db (A1 - A2) ]
        dLambda/d db = -2 [ da (A1 - A2)        + db A2        ]
    """
    da = np.asarray(da, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    v = da - db
    w2 = np.einsum("...d,...d->...", v, v)
    norm_da2 = np.einsum("...d,...d->...", da, da)
    degen = w2 < EPS_DEGENERATE**2
    w2_safe = np.where(degen, 1.0, w2)

    # quadratic exponent gamma(s) = a + (s - mu)^2 / (2 sigma^2)
    sig = 1.0 / np.sqrt(2.0 * w2_safe)
    dav = np.einsum("...d,...d->...", da, v)
    mu = dav / w2_safe
    a = norm_da2 - dav * mu
    a = np.maximum(a, 0.0)  # Cauchy-Schwarz; clamp fp noise
    u0 = -mu / sig
    u1 = (1.0 - mu) / sig
    C = SQRT_2PI * _normal_cdf_diff(u0, u1)
    pref = lengths * np.exp(beta - a)
    lam_nd = pref * sig * C

    # linear exponent gamma(s) ~= c0 + c1 s when da ~= db
    c0 = norm_da2
    c1 = 2.0 * (np.einsum("...d,...d->...", da, db) - c0)
    e0, e1 = _exp_linear_integrals(c1)
    pref_d = lengths * np.exp(beta - c0)
    lam_d = pref_d * e0

    lam = np.where(degen, lam_d, lam_nd)
    if not want_grad:
        return lam, None, None

    g0 = np.exp(-0.5 * u0 * u0)
    g1 = np.exp(-0.5 * u1 * u1)
    s1 = g0 - g1
    s2 = u0 * g0 - u1 * g1 + C
    a0 = pref * sig * C
    a1 = pref * sig * (mu * C + sig * s1)
    a2 = pref * sig * (mu * mu * C + 2.0 * mu * sig * s1 + sig * sig * s2)
    ga_nd = -2.0 * (da * (a0 - 2.0 * a1 + a2)[..., None] + db * (a1 - a2)[..., None])
    gb_nd = -2.0 * (da * (a1 - a2)[..., None] + db * a2[..., None])

    a0_d = lam_d
    a1_d = pref_d * e1
    ga_d = -2.0 * (da * (a0_d - 2.0 * a1_d)[..., None] + db * a1_d[..., None])
    gb_d = -2.0 * da * a1_d[..., None]

    mask = degen[..., None]
    return lam, np.where(mask, ga_d, ga_nd), np.where(mask, gb_d, gb_nd)


def _riemann_rate_batch(zi_a, zi_b, zj_a, zj_b, beta, lengths, R, kind, want_grad=False):
    """Left Riemann cumulative rate |I| * mean_r lambda(s_r), s_r = (r-1)/R.

    Works for both rate kinds; gradients are the exact derivatives of the
    Riemann approximation with respect to the four endpoint positions.
    """
    s = np.arange(R, dtype=np.float64) / R
    om = 1.0 - s
    pi = zi_a[..., None, :] * om[:, None] + zi_b[..., None, :] * s[:, None]
    pj = zj_a[..., None, :] * om[:, None] + zj_b[..., None, :] * s[:, None]
    if kind == EUCLIDEAN:
        diff = pi - pj
        loglam = beta - np.einsum("...rd,...rd->...r", diff, diff)
    else:
        loglam = beta + np.einsum("...rd,...rd->...r", pi, pj)
    lam_r = np.exp(loglam)
    lam = lengths * lam_r.mean(axis=-1)
    if not want_grad:
        return lam, None

    wfac = (np.asarray(lengths)[..., None] / R) * lam_r  # (..., R)
    if kind == EUCLIDEAN:
        gpi = -2.0 * wfac[..., None] * diff
        gpj = -gpi
    else:
        gpi = wfac[..., None] * pj
        gpj = wfac[..., None] * pi
    ga_i = np.einsum("...rd,r->...d", gpi, om)
    gb_i = np.einsum("...rd,r->...d", gpi, s)
    ga_j = np.einsum("...rd,r->...d", gpj, om)
    gb_j = np.einsum("...rd,r->...d", gpj, s)
    return lam, (ga_i, gb_i, ga_j, gb_j)


def cumulative_rate_closed(
    cfg: LatentConfiguration, rm: RateModel, i: int, j: int, k: int
) -> float:
    """Closed-form Lambda_ij(I_k) for the euclidean model (k 1-based)."""
    if rm.kind != EUCLIDEAN:
        raise ValueError("closed-form cumulative rate requires the euclidean model")
    a, b = cfg.part.bounds(k)
    da = cfg.z[i, k - 1] - cfg.z[j, k - 1]
    db = cfg.z[i, k] - cfg.z[j, k]
    lam, _, _ = _closed_rate_batch(da, db, rm.beta, b - a)
    return float(lam)


def cumulative_rate_riemann(
    cfg: LatentConfiguration, rm: RateModel, i: int, j: int, k: int, R: int
) -> float:
    """Left-Riemann Lambda_ij(I_k) with R equal sub-steps (k 1-based)."""
    if R < 1:
        raise ValueError("R must be >= 1")
    a, b = cfg.part.bounds(k)
    lam, _ = _riemann_rate_batch(
        cfg.z[i, k - 1], cfg.z[i, k], cfg.z[j, k - 1], cfg.z[j, k],
        rm.beta, b - a, R, rm.kind,
    )
    return float(lam)


def pair_interval_nll(
    cfg: LatentConfiguration,
    rm: RateModel,
    i: int,
    j: int,
    k: int,
    times: Sequence[float],
    riemann_r: int = 10,
) -> float:
    """Lambda_ij(I_k) - sum_t log lambda_ij(t) for the pair's events in I_k."""
    a, b = cfg.part.bounds(k)
    times = np.asarray(times, dtype=np.float64)
    if times.size and (times.min() < a or times.max() > b):
        raise ValueError(f"event times must lie in interval {k} = [{a}, {b}]")
    if rm.kind == EUCLIDEAN:
        lam = cumulative_rate_closed(cfg, rm, i, j, k)
    else:
        lam = cumulative_rate_riemann(cfg, rm, i, j, k, riemann_r)
    return lam - sum(log_rate(cfg, rm, i, j, float(t)) for t in times)


@dataclass(frozen=True)
class SamplingPlan:
    """How the likelihood sums over pairs.

    ``None`` everywhere means the full likelihood. ``negatives_per_node``
    switches the never-interacting survival terms to a reweighted per-node
    subsample; ``node_batch`` restricts to terms touching the given nodes and
    rescales by n/|batch|. ``excluded_pairs`` (e.g. held-out validation/test
    pairs) are dropped from the likelihood entirely and never appear in
    negative pools.
    """

    negatives_per_node: Optional[int] = None
    node_batch: Optional[tuple[int, ...]] = None
    seed: int = 0
    excluded_pairs: frozenset = frozenset()

    @classmethod
    def full(cls) -> "SamplingPlan":
        return cls()


@dataclass(eq=False)
class _Terms:
    """Realized likelihood terms: weighted survival pairs and events."""

    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_w: np.ndarray
    ev_i: np.ndarray
    ev_j: np.ndarray
    ev_k0: np.ndarray  # 0-based interval index
    ev_s: np.ndarray   # local coordinate within the interval
    ev_w: np.ndarray


def _all_pair_arrays(n: int, directed: bool) -> tuple[np.ndarray, np.ndarray]:
    if directed:
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        mask = ii != jj
        return ii[mask].astype(np.int64), jj[mask].astype(np.int64)
    ii, jj = np.triu_indices(n, k=1)
    return ii.astype(np.int64), jj.astype(np.int64)


def _pair_codes(i: np.ndarray, j: np.ndarray, n: int) -> np.ndarray:
    return i.astype(np.int64) * n + j.astype(np.int64)


def realize_plan(ev: EventList, part: IntervalPartition, plan: SamplingPlan) -> _Terms:
    """Materialize a sampling plan into weighted survival and event terms.

    Deterministic given the plan's seed. In undirected mode a sampled
    never-interacting pair carries weight pool_i / (2 * S_i): pools are
    per-node over all partners, so each unordered pair can be drawn from both
    endpoints, and the halving makes the estimator exact when S_i = pool_i
    and unbiased otherwise.
    """
    n = ev.n
    excl_codes = np.asarray(
        sorted(
            a * n + b
            for a, b in (canonical_pair(x, y, ev.directed) for x, y in plan.excluded_pairs)
        ),
        dtype=np.int64,
    )

    in_batch = None
    scale = 1.0
    if plan.node_batch is not None:
        if len(plan.node_batch) == 0:
            raise ValueError("node batch must be non-empty")
        in_batch = np.zeros(n, dtype=bool)
        in_batch[list(plan.node_batch)] = True
        scale = n / len(plan.node_batch)

    def pair_weights(pi: np.ndarray, pj: np.ndarray) -> np.ndarray:
        if in_batch is None:
            return np.ones(pi.shape[0], dtype=np.float64)
        if ev.directed:
            return scale * in_batch[pi].astype(np.float64)
        return scale * 0.5 * (in_batch[pi].astype(np.float64) + in_batch[pj].astype(np.float64))

    pos_codes = np.unique(_pair_codes(ev.src, ev.dst, n)) if ev.m else np.empty(0, np.int64)
    if ev.directed and pos_codes.size:
        # negative pools are dyad-level, so the exact survival terms must
        # cover both orientations of any dyad that interacts at all
        rev = (pos_codes % n) * n + pos_codes // n
        pos_codes = np.unique(np.concatenate([pos_codes, rev]))
    if excl_codes.size:
        pos_codes = pos_codes[~np.isin(pos_codes, excl_codes)]

    if plan.negatives_per_node is None:
        ui, uj = _all_pair_arrays(n, ev.directed)
        if excl_codes.size:
            keep = ~np.isin(_pair_codes(ui, uj, n), excl_codes)
            ui, uj = ui[keep], uj[keep]
        w = pair_weights(ui, uj)
        nz = w > 0
        pair_i, pair_j, pair_w = ui[nz], uj[nz], w[nz]
    else:
        pos_i = pos_codes // n
        pos_j = pos_codes % n
        w_pos = pair_weights(pos_i, pos_j)
        nz = w_pos > 0
        parts_i = [pos_i[nz]]
        parts_j = [pos_j[nz]]
        parts_w = [w_pos[nz]]

        partners: list[set[int]] = [set() for _ in range(n)]
        for a, b in zip(ev.src.tolist(), ev.dst.tolist()):
            partners[a].add(b)
            partners[b].add(a)
        excluded_of: dict[int, set[int]] = {}
        for a, b in plan.excluded_pairs:
            excluded_of.setdefault(a, set()).add(b)
            excluded_of.setdefault(b, set()).add(a)

        rng = np.random.default_rng(plan.seed)
        nodes = sorted(plan.node_batch) if plan.node_batch is not None else range(n)
        half = 1.0 if ev.directed else 0.5
        for i in nodes:
            blocked = partners[i] | excluded_of.get(i, set())
            pool = [j for j in range(n) if j != i and j not in blocked]
            if not pool:
                continue
            take = min(plan.negatives_per_node, len(pool))
            idx = rng.choice(len(pool), size=take, replace=False)
            w_neg = scale * half * len(pool) / take
            parts_i.append(np.full(take, i, dtype=np.int64))
            parts_j.append(np.asarray(pool, dtype=np.int64)[idx])
            parts_w.append(np.full(take, w_neg))
        pair_i = np.concatenate(parts_i)
        pair_j = np.concatenate(parts_j)
        pair_w = np.concatenate(parts_w)

    if ev.m:
        k1, s = part.local_coord(ev.time)
        ev_code = _pair_codes(ev.src, ev.dst, n)
        ew = pair_weights(ev.src, ev.dst)
        if excl_codes.size:
            ew = np.where(np.isin(ev_code, excl_codes), 0.0, ew)
        keep = ew > 0
        ev_i, ev_j = ev.src[keep], ev.dst[keep]
        ev_k0 = (np.atleast_1d(k1)[keep] - 1).astype(np.int64)
        ev_s = np.atleast_1d(s)[keep]
        ev_w = ew[keep]
    else:
        ev_i = ev_j = ev_k0 = np.empty(0, dtype=np.int64)
        ev_s = ev_w = np.empty(0, dtype=np.float64)

    return _Terms(pair_i, pair_j, pair_w, ev_i, ev_j, ev_k0, ev_s, ev_w)


def _scatter_add(dz: np.ndarray, flat_cut: np.ndarray, contrib: np.ndarray) -> None:
    """Add contrib (..., d) into dz rows given flat (node, cut) indices."""
    n, kp1, d = dz.shape
    idx = flat_cut[..., None] * d + np.arange(d)
    dz += np.bincount(
        idx.ravel(), weights=contrib.ravel(), minlength=n * kp1 * d
    ).reshape(n, kp1, d)


def _survival_chunk(z, beta, kind, lengths, riemann_r, terms, sl, want_grad):
    """Value, dz, dbeta of the weighted survival terms in slice sl."""
    n, kp1, d = z.shape
    K = kp1 - 1
    pi = terms.pair_i[sl]
    pj = terms.pair_j[sl]
    w = terms.pair_w[sl]
    zi_a = z[pi, :-1, :]
    zi_b = z[pi, 1:, :]
    zj_a = z[pj, :-1, :]
    zj_b = z[pj, 1:, :]
    if kind == EUCLIDEAN:
        lam, ga, gb = _closed_rate_batch(
            zi_a - zj_a, zi_b - zj_b, beta, lengths[None, :], want_grad
        )
        grads = None if not want_grad else (ga, gb, -ga, -gb)
    else:
        lam, grads = _riemann_rate_batch(
            zi_a, zi_b, zj_a, zj_b, beta, lengths[None, :], riemann_r, kind, want_grad
        )
    wlam = w[:, None] * lam
    value = float(wlam.sum())
    dbeta = value  # d Lambda / d beta = Lambda
    if not want_grad:
        return value, None, dbeta

    ga_i, gb_i, ga_j, gb_j = grads
    wcol = w[:, None, None]
    dz = np.zeros_like(z)
    cuts_a = np.arange(K, dtype=np.int64)[None, :]
    flat_ia = pi[:, None] * kp1 + cuts_a
    flat_ib = flat_ia + 1
    flat_ja = pj[:, None] * kp1 + cuts_a
    flat_jb = flat_ja + 1
    _scatter_add(dz, flat_ia, wcol * ga_i)
    _scatter_add(dz, flat_ib, wcol * gb_i)
    _scatter_add(dz, flat_ja, wcol * ga_j)
    _scatter_add(dz, flat_jb, wcol * gb_j)
    return value, dz, dbeta


def nll_value_grad(
    z: np.ndarray,
    beta: float,
    kind: str,
    part: IntervalPartition,
    terms: _Terms,
    riemann_r: int = 10,
    want_grad: bool = False,
    threads: int = 1,
):
    """Negative log-likelihood of the realized terms, optionally with gradient.

    Returns (value, dz, dbeta); dz is None unless ``want_grad``. With
    threads > 1 the survival batch is split into chunks evaluated on a
    thread pool; partials are summed in fixed chunk order, so results match
    the single-threaded path.
    """
    n, kp1, d = z.shape
    lengths = part.lengths
    P = terms.pair_i.shape[0]
    max_chunk = 65536 if kind == EUCLIDEAN else 4096
    n_chunks = max(1, min(threads, P)) if threads > 1 else 1
    n_chunks = max(n_chunks, -(-P // max_chunk)) if P else 1
    bounds = np.linspace(0, P, n_chunks + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(sl):
        return _survival_chunk(z, beta, kind, lengths, riemann_r, terms, sl, want_grad)

    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, slices))
    else:
        results = [run(sl) for sl in slices]

    value = 0.0
    dbeta = 0.0
    dz = np.zeros_like(z) if want_grad else None
    for val, dz_part, dbeta_part in results:
        value += val
        dbeta += dbeta_part
        if want_grad and dz_part is not None:
            dz += dz_part

    # event terms: -sum_m w_m log lambda(t_m)
    if terms.ev_i.size:
        kk = terms.ev_k0
        s = terms.ev_s[:, None]
        om = 1.0 - s
        pi_pos = om * z[terms.ev_i, kk, :] + s * z[terms.ev_i, kk + 1, :]
        pj_pos = om * z[terms.ev_j, kk, :] + s * z[terms.ev_j, kk + 1, :]
        w = terms.ev_w
        if kind == EUCLIDEAN:
            diff = pi_pos - pj_pos
            loglam = beta - np.einsum("md,md->m", diff, diff)
        else:
            loglam = beta + np.einsum("md,md->m", pi_pos, pj_pos)
        value += float(-(w * loglam).sum())
        dbeta += float(-w.sum())
        if want_grad:
            if kind == EUCLIDEAN:
                gpi = 2.0 * w[:, None] * diff
                gpj = -gpi
            else:
                gpi = -w[:, None] * pj_pos
                gpj = -w[:, None] * pi_pos
            flat_a_i = terms.ev_i * kp1 + kk
            flat_a_j = terms.ev_j * kp1 + kk
            _scatter_add(dz, flat_a_i, om * gpi)
            _scatter_add(dz, flat_a_i + 1, s * gpi)
            _scatter_add(dz, flat_a_j, om * gpj)
            _scatter_add(dz, flat_a_j + 1, s * gpj)

    return value, dz, dbeta


def total_nll(
    cfg: LatentConfiguration,
    rm: RateModel,
    ev: EventList,
    part: IntervalPartition,
    plan: Optional[SamplingPlan] = None,
    riemann_r: int = 10,
    threads: int = 1,
) -> float:
    """Poisson-process negative log-likelihood under a sampling plan."""
    if plan is None:
        plan = SamplingPlan.full()
    terms = realize_plan(ev, part, plan)
    value, _, _ = nll_value_grad(
        cfg.z, rm.beta, rm.kind, part, terms, riemann_r=riemann_r, threads=threads
    )
    return value
