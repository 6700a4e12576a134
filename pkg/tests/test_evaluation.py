import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgne.events import IntervalPartition, interval_counts, split_edges
from tgne.evaluation import (
    LsdmOpts,
    ScoredInstance,
    _lsdm_nll_grad,
    auc,
    auc_from_scores,
    build_instances,
    edge_uncertainty,
    fit_lsdm,
    lsdm_score,
    neighbor_distance,
    node_uncertainty,
    rate_vs_uncertainty_table,
    regression_slope_from_points,
    restrict_counts,
    score_pa,
    score_random,
    score_tgne,
    score_tgne_many,
    score_tgne_predictive,
)
from tgne.inference import FittedModel, Hyperparams, VariationalState, fit
from tgne.model import EUCLIDEAN

from conftest import random_events


@pytest.fixture(scope="module")
def fitted_sbm(sbm_sample):
    """A moderately trained model on the full fixture, shared by this module."""
    return fit(sbm_sample.events, Hyperparams(tau=1.0, epochs=300, seed=0))


def static_model(mu_points, sigma=0.1, beta=0.0, K=15, d=2):
    """FittedModel with constant-in-time means at the given points."""
    n = len(mu_points)
    part = IntervalPartition.uniform(K)
    mu = np.zeros((n, K + 1, d))
    for i, p in enumerate(mu_points):
        mu[i, :, :] = p
    state = VariationalState(
        mu=mu, log_sigma=np.full((n, K + 1), np.log(sigma)), beta=beta
    )
    return FittedModel(
        state=state,
        hyper=Hyperparams(d=d, K=K),
        part=part,
        loss_trace=np.empty(0),
        node_labels=[str(i) for i in range(n)],
    )


class TestBuildInstances:
    def test_one_to_one_ratio(self, ten_node_events):
        part = IntervalPartition.uniform(4)
        counts = interval_counts(ten_node_events, part)
        pairs = set(ten_node_events.unique_pairs())
        instances, shortfall = build_instances(counts, pairs, part, seed=0)
        assert shortfall == {}
        for k in range(1, 5):
            pos = [x for x in instances if x.k == k and x.label == 1]
            neg = [x for x in instances if x.k == k and x.label == 0]
            assert len(pos) == len(neg)

    def test_exhausted_negatives_shortfall(self):
        # two nodes, single pair, active in the only interval: no negatives exist
        ev = random_events(n=2, m=6, seed=0)
        part = IntervalPartition.uniform(1)
        counts = interval_counts(ev, part)
        instances, shortfall = build_instances(counts, {(0, 1)}, part, seed=0)
        assert all(x.label == 1 for x in instances)
        assert shortfall == {1: 1}

    def test_labels_match_event_recomputation(self, sbm_sample):
        ev = sbm_sample.events
        part = IntervalPartition.uniform(15)
        counts = interval_counts(ev, part)
        split = split_edges(ev, 0.2, 0.0, seed=1)
        instances, _ = build_instances(counts, split.test, part, seed=2)
        for inst in instances[:300]:
            times = ev.pair_times(inst.i, inst.j)
            a, b = part.bounds(inst.k)
            active = np.any((times >= a) & ((times < b) | ((inst.k == 15) & (times <= b))))
            assert inst.label == int(active)

    def test_negatives_inactive_and_unique_per_interval(self, sbm_sample):
        ev = sbm_sample.events
        part = IntervalPartition.uniform(15)
        counts = interval_counts(ev, part)
        split = split_edges(ev, 0.1, 0.0, seed=3)
        instances, _ = build_instances(counts, split.test, part, seed=4)
        seen = set()
        for inst in instances:
            if inst.label == 0:
                assert counts.count(inst.i, inst.j, inst.k) == 0
                assert (inst.i, inst.j, inst.k) not in seen
                seen.add((inst.i, inst.j, inst.k))

    def test_deterministic(self, ten_node_events):
        part = IntervalPartition.uniform(3)
        counts = interval_counts(ten_node_events, part)
        pairs = set(ten_node_events.unique_pairs())
        a = build_instances(counts, pairs, part, seed=9)
        b = build_instances(counts, pairs, part, seed=9)
        assert a == b

    def test_directed_universe_including_dense_intervals(self):
        # dense: 3 nodes, nearly every ordered pair active in the one interval
        ev = random_events(n=3, m=30, seed=4, directed=True)
        part = IntervalPartition.uniform(1)
        counts = interval_counts(ev, part)
        instances, _short = build_instances(
            counts, ev.unique_pairs(), part, seed=0
        )
        for inst in instances:
            if inst.label == 0:
                assert counts.count(inst.i, inst.j, 1) == 0
        # sparse: the rejection path on a larger directed graph
        ev2 = random_events(n=12, m=10, seed=5, directed=True)
        counts2 = interval_counts(ev2, IntervalPartition.uniform(2))
        inst2, _ = build_instances(counts2, ev2.unique_pairs(), IntervalPartition.uniform(2), seed=1)
        n_pos = sum(x.label for x in inst2)
        assert n_pos and len(inst2) == 2 * n_pos


class TestAuc:
    def test_perfect_separation(self):
        inst = [ScoredInstance(0, 1, 1, s, l) for s, l in [(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)]]
        assert auc(inst) == 1.0

    def test_all_ties_half(self):
        inst = [ScoredInstance(0, 1, 1, 0.5, l) for l in (1, 1, 0, 0)]
        assert auc(inst) == 0.5

    def test_hand_example_three_quarters(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        labels = np.array([0, 0, 1, 1])
        # brute-force pair counting oracle
        correct = sum(
            (1.0 if sp > sn else 0.5 if sp == sn else 0.0)
            for sp in scores[labels == 1]
            for sn in scores[labels == 0]
        )
        assert correct / 4 == 0.75
        assert auc_from_scores(scores, labels) == 0.75

    def test_matches_pair_counting_with_ties(self):
        rng = np.random.default_rng(0)
        scores = rng.integers(0, 5, size=60).astype(float)
        labels = rng.integers(0, 2, size=60)
        if labels.sum() in (0, 60):
            labels[0] = 1 - labels[0]
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        brute = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
        assert np.isclose(auc_from_scores(scores, labels), brute, rtol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc_from_scores(np.array([0.1, 0.2]), np.array([1, 1]))

    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 1000),
        a=st.floats(0.1, 10),
        b=st.floats(-5, 5),
    )
    def test_monotone_transform_invariance(self, seed, a, b):
        rng = np.random.default_rng(seed)
        scores = rng.standard_normal(40)
        labels = np.r_[np.ones(20, dtype=int), np.zeros(20, dtype=int)]
        base = auc_from_scores(scores, labels)
        assert np.isclose(auc_from_scores(a * scores + b, labels), base, rtol=1e-12)
        assert np.isclose(auc_from_scores(np.exp(scores), labels), base, rtol=1e-12)


class TestScoreTgne:
    def test_coincident_static_means(self):
        fm = static_model([(0.0, 0.0), (0.0, 0.0)], beta=0.0, K=15)
        assert np.isclose(score_tgne(fm, 0, 1, 3), 1 / 15, rtol=1e-12)

    def test_monotone_decreasing_in_separation(self):
        seps = np.linspace(0, 3, 12)
        scores = [
            score_tgne(static_model([(0.0, 0.0), (s, 0.0)], K=5), 0, 1, 2) for s in seps
        ]
        assert all(a > b for a, b in zip(scores, scores[1:]))

    def test_structural_sanity_on_fixture(self, sbm_sample, fitted_sbm):
        # first-segment intervals: intra pairs should outscore inter pairs
        labels = sbm_sample.labels[:, 0]
        rng = np.random.default_rng(0)
        intra, inter = [], []
        nodes = np.arange(sbm_sample.events.n)
        for _ in range(300):
            i, j = rng.choice(nodes, size=2, replace=False)
            i, j = min(i, j), max(i, j)
            k = int(rng.integers(1, 6))
            s = score_tgne(fitted_sbm, int(i), int(j), k)
            (intra if labels[i] == labels[j] else inter).append(s)
        assert np.median(intra) > np.median(inter)

    def test_predictive_variant_close_to_plugin_at_small_sigma(self):
        fm = static_model([(0.0, 0.0), (1.0, 0.0)], sigma=1e-6, K=5)
        plug = score_tgne(fm, 0, 1, 1)
        pred = score_tgne_predictive(fm, 0, 1, 1, B=50, seed=0)
        assert np.isclose(plug, pred, rtol=1e-6)

    def test_dot_model_scoring_matches_riemann(self):
        from tgne.model import (
            DOT,
            LatentConfiguration,
            RateModel,
            cumulative_rate_riemann,
        )

        fm = static_model([(0.5, 0.2), (0.3, -0.4)], K=4)
        fm.hyper.rate_model = DOT
        cfg = LatentConfiguration(fm.state.mu, fm.part)
        ref = cumulative_rate_riemann(cfg, RateModel(DOT, 0.0), 0, 1, 2, fm.hyper.riemann_r)
        assert np.isclose(score_tgne(fm, 0, 1, 2), ref, rtol=1e-12)


class TestLsdm:
    def test_separable_pair_drives_probability_to_one(self):
        ev = random_events(n=2, m=8, seed=1)
        part = IntervalPartition.uniform(2)
        counts = interval_counts(ev, part)
        k = int(next(iter(counts.counts))[2])
        model = fit_lsdm(counts, {(0, 1)}, k, d=2, opts=LsdmOpts(iters=400, seed=0))
        assert lsdm_score(model, 0, 1) > 0.99
        third = len(model.nll_trace) // 3
        assert model.nll_trace[-1] < model.nll_trace[third] < model.nll_trace[0]

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        n, d, P = 6, 2, 9
        z = rng.standard_normal((n, d))
        beta = 0.3
        ii = rng.integers(0, n, P)
        jj = (ii + 1 + rng.integers(0, n - 1, P)) % n
        y = rng.integers(0, 2, P).astype(float)
        _nll, g_z, g_b = _lsdm_nll_grad(z, beta, ii, jj, y)
        h = 1e-6
        for _ in range(10):
            a, c = rng.integers(n), rng.integers(d)
            zp = z.copy(); zp[a, c] += h
            zm = z.copy(); zm[a, c] -= h
            fd = (_lsdm_nll_grad(zp, beta, ii, jj, y)[0] - _lsdm_nll_grad(zm, beta, ii, jj, y)[0]) / (2 * h)
            assert abs(g_z[a, c] - fd) <= 1e-4 * max(abs(fd), 1e-8)
        fd_b = (
            _lsdm_nll_grad(z, beta + h, ii, jj, y)[0]
            - _lsdm_nll_grad(z, beta - h, ii, jj, y)[0]
        ) / (2 * h)
        assert abs(g_b - fd_b) <= 1e-4 * max(abs(fd_b), 1e-8)

    def test_overfits_training_interval(self, sbm_sample):
        ev = sbm_sample.events
        part = IntervalPartition.uniform(15)
        counts = interval_counts(ev, part)
        split = split_edges(ev, 0.1, 0.0, seed=0)
        train_counts = restrict_counts(counts, split.train)
        model = fit_lsdm(train_counts, split.train, 2, d=2, opts=LsdmOpts(iters=500, seed=0))
        pairs = sorted(split.train)
        scores = np.asarray([lsdm_score(model, i, j) for i, j in pairs])
        labels = np.asarray([1 if counts.count(i, j, 2) >= 1 else 0 for i, j in pairs])
        assert auc_from_scores(scores, labels) > 0.9


class TestScorePaAndRandom:
    def test_isolated_node_zero(self, ten_node_events):
        part = IntervalPartition.uniform(2)
        counts = interval_counts(ten_node_events, part)
        ql = [p for p in range(ten_node_events.n) if counts.degree(p, 1) == 0]
        if ql:
            assert score_pa(counts, ql[0], 0, 1) == 0.0

    def test_degree_product(self):
        ev = random_events(n=4, m=0, seed=0)
        part = IntervalPartition.uniform(1)
        import numpy as np
        from tgne.events import EventList

        ev = EventList(
            src=np.array([0, 0, 0, 1, 1, 2, 2]),
            dst=np.array([1, 2, 3, 2, 3, 3, 3]),
            time=np.linspace(0, 1, 7),
            n=4,
        )
        counts = interval_counts(ev, part)
        assert score_pa(counts, 0, 1, 1) == counts.degree(0, 1) * counts.degree(1, 1)

    def test_pa_never_sees_test_counts(self, sbm_sample):
        ev = sbm_sample.events
        part = IntervalPartition.uniform(5)
        counts = interval_counts(ev, part)
        split = split_edges(ev, 0.3, 0.0, seed=0)
        train_counts = restrict_counts(counts, split.train)
        assert train_counts.active_pairs() == set(split.train)
        assert train_counts.total() < counts.total()

    def test_random_uniform_and_deterministic(self):
        rng = np.random.default_rng(5)
        draws = np.asarray([score_random(rng) for _ in range(100_000)])
        from scipy.stats import kstest

        assert kstest(draws, "uniform").pvalue > 0.01
        a = [score_random(np.random.default_rng(1)) for _ in range(5)]
        b = [score_random(np.random.default_rng(1)) for _ in range(5)]
        assert a == b

    def test_random_auc_near_half(self):
        rng = np.random.default_rng(6)
        scores = rng.random(4000)
        labels = np.r_[np.ones(2000, dtype=int), np.zeros(2000, dtype=int)]
        assert abs(auc_from_scores(scores, labels) - 0.5) < 0.03


class TestNodeUncertainty:
    def test_mean_of_endpoints(self):
        vs = VariationalState(
            mu=np.zeros((1, 3, 2)),
            log_sigma=np.log(np.array([[0.2, 0.4, 0.1]])),
            beta=0.0,
        )
        assert np.isclose(node_uncertainty(vs, 0, 1), 0.3)
        assert np.isclose(node_uncertainty(vs, 0, 2), 0.25)

    def test_constant_sigma(self):
        vs = VariationalState(
            mu=np.zeros((2, 4, 2)), log_sigma=np.full((2, 4), np.log(0.7)), beta=0.0
        )
        for k in (1, 2, 3):
            assert np.isclose(node_uncertainty(vs, 1, k), 0.7)

    def test_interval_bounds_checked(self):
        vs = VariationalState(mu=np.zeros((1, 3, 2)), log_sigma=np.zeros((1, 3)), beta=0.0)
        with pytest.raises(ValueError):
            node_uncertainty(vs, 0, 3)


class TestNeighborDistance:
    def test_single_coincident_neighbor(self):
        fm = static_model([(1.0, 1.0), (1.0, 1.0)], K=3)
        ev = random_events(n=2, m=5, seed=3)
        counts = interval_counts(ev, fm.part)
        k = next(iter(counts.counts))[2]
        assert neighbor_distance(fm, counts, 0, k) == 0.0

    def test_mean_of_two_neighbors(self):
        fm = static_model([(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)], K=2)
        from tgne.events import EventList

        ev = EventList(
            src=np.array([0, 0]), dst=np.array([1, 2]), time=np.array([0.1, 0.2]), n=3
        )
        counts = interval_counts(ev, fm.part)
        assert np.isclose(neighbor_distance(fm, counts, 0, 1), 2.0)

    def test_undefined_without_neighbors(self):
        fm = static_model([(0.0, 0.0), (1.0, 0.0)], K=2)
        from tgne.events import EventList

        ev = EventList(
            src=np.array([0]), dst=np.array([1]), time=np.array([0.1]), n=2
        )
        counts = interval_counts(ev, fm.part)
        assert neighbor_distance(fm, counts, 0, 2) is None


class TestEdgeUncertainty:
    def test_degenerate_posterior_matches_plugin(self):
        fm = static_model([(0.0, 0.0), (0.8, 0.0)], sigma=1e-9, K=5)
        mean, std = edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 2, B=100, seed=0)
        assert std < 1e-7
        assert np.isclose(mean, score_tgne(fm, 0, 1, 2), rtol=1e-6)

    def test_deterministic_under_seed(self):
        fm = static_model([(0.0, 0.0), (0.8, 0.0)], sigma=0.3, K=4)
        a = edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 1, B=500, seed=3)
        b = edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 1, B=500, seed=3)
        assert a == b

    def test_two_seed_agreement_at_large_B(self):
        fm = static_model([(0.0, 0.0), (0.8, 0.0)], sigma=0.3, K=4)
        B = 100_000
        m1, s1 = edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 1, B=B, seed=1)
        m2, s2 = edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 1, B=B, seed=2)
        se = np.sqrt(s1**2 / B + s2**2 / B)
        assert abs(m1 - m2) < 3 * se

    def test_b_must_be_at_least_two(self):
        fm = static_model([(0.0, 0.0), (0.8, 0.0)], K=2)
        with pytest.raises(ValueError):
            edge_uncertainty(fm.state, EUCLIDEAN, fm.part, 0, 1, 1, B=1)


class TestUncertaintyRegression:
    def test_exact_linear_input(self):
        n_values = np.repeat(np.arange(11), 3)
        stds = 2.0 - 0.1 * n_values
        assert np.isclose(regression_slope_from_points(n_values, stds), -0.1, rtol=1e-10)

    def test_constant_input_zero_slope(self):
        n_values = np.asarray([0, 1, 2, 3, 0, 1])
        stds = np.full(6, 0.7)
        assert abs(regression_slope_from_points(n_values, stds)) < 1e-12

    def test_unique_averaging(self):
        n_values = np.asarray([0, 0, 1, 1])
        stds = np.asarray([1.0, 3.0, 0.0, 1.0])
        # unique means: (2.0 at N=0, 0.5 at N=1) -> slope -1.5
        assert np.isclose(regression_slope_from_points(n_values, stds), -1.5)
        raw = regression_slope_from_points(n_values, stds, per_unique_n=False)
        assert np.isclose(raw, -1.5)  # balanced design: same here

    def test_degenerate_design_rejected(self):
        with pytest.raises(ValueError):
            regression_slope_from_points(np.ones(5), np.arange(5.0))


class TestRateVsUncertaintyTable:
    def test_row_count_and_negative_constraints(self, ten_node_events):
        fm = static_model([(float(i), 0.0) for i in range(10)], K=4)
        records = rate_vs_uncertainty_table(
            ten_node_events, fm.state, EUCLIDEAN, fm.part, B=20, seed=0
        )
        assert len(records) == 2 * ten_node_events.m
        positives = [r for r in records if not r.is_negative]
        negatives = [r for r in records if r.is_negative]
        assert len(positives) == len(negatives)
        for pos, neg in zip(positives, negatives):
            assert neg.i == pos.i and neg.t == pos.t
            assert neg.j != pos.j and neg.j != neg.i

    def test_degenerate_posterior_zero_std(self, ten_node_events):
        fm = static_model([(float(i), 0.0) for i in range(10)], sigma=1e-9, K=4)
        records = rate_vs_uncertainty_table(
            ten_node_events, fm.state, EUCLIDEAN, fm.part, B=20, seed=0
        )
        assert all(r.rate_std < 1e-7 for r in records)
