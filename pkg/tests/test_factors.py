"""Factor graph tests: residual oracles, LM behavior, marginalization."""

import numpy as np
import pytest

from lagodom import factors as FG
from lagodom import geometry
from lagodom.factors import (
    PLANAR,
    POINT,
    DegenerateGeometryError,
    FactorBatch,
    Graph,
    MatchFactor,
    OptimizeSettings,
    PriorFactor,
    linearize,
    marginalize,
    optimize,
    planar_residual,
    point_residual,
)
from lagodom.geometry import Pose, identity

from conftest import random_pose


def random_factor(rng, kind, k=0, i=1):
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    return MatchFactor(
        kind=kind,
        k=k,
        i=i,
        p_k=rng.uniform(-5, 5, 3),
        p_i=rng.uniform(-5, 5, 3),
        n_k=n if kind == PLANAR else None,
    )


def residual_of(x_k, x_i, f):
    if f.kind == PLANAR:
        r, j_k, j_i = planar_residual(x_k, x_i, f)
        return np.array([r]), j_k, j_i
    return point_residual(x_k, x_i, f)


class TestResiduals:
    def test_coincident_zero(self):
        f = MatchFactor(PLANAR, 0, 1, np.ones(3), np.ones(3), np.array([0.0, 0, 1]))
        r, _, _ = planar_residual(identity(), identity(), f)
        assert r == 0.0
        g = MatchFactor(POINT, 0, 1, np.ones(3), np.ones(3))
        rp, _, _ = point_residual(identity(), identity(), g)
        np.testing.assert_array_equal(rp, np.zeros(3))

    def test_planar_pure_translation(self, rng):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        t = rng.uniform(-2, 2, 3)
        p = rng.uniform(-3, 3, 3)
        f = MatchFactor(PLANAR, 0, 1, p, p, n)
        x_i = Pose(np.eye(3), t)
        r, _, _ = planar_residual(identity(), x_i, f)
        assert abs(r - n @ t) < 1e-12

    def test_point_direct_substitution(self):
        f = MatchFactor(POINT, 0, 1, np.zeros(3), np.zeros(3))
        x_i = Pose(np.eye(3), np.array([1.0, 0, 0]))
        r, _, _ = point_residual(identity(), x_i, f)
        np.testing.assert_allclose(r, [1.0, 0, 0], atol=1e-15)

    def test_jacobians_match_finite_differences(self, rng):
        # central differences as the independent oracle
        eps = 1e-6
        worst = 0.0
        for trial in range(1000):
            kind = PLANAR if trial % 2 == 0 else POINT
            f = random_factor(rng, kind)
            x_k = random_pose(rng)
            x_i = random_pose(rng)
            r0, j_k, j_i = residual_of(x_k, x_i, f)
            for which, jac in (("k", j_k), ("i", j_i)):
                fd = np.zeros_like(jac)
                for q in range(6):
                    d = np.zeros(6)
                    d[q] = eps
                    if which == "k":
                        rp = residual_of(geometry.retract(x_k, d), x_i, f)[0]
                        rm = residual_of(geometry.retract(x_k, -d), x_i, f)[0]
                    else:
                        rp = residual_of(x_k, geometry.retract(x_i, d), f)[0]
                        rm = residual_of(x_k, geometry.retract(x_i, -d), f)[0]
                    fd[:, q] = (rp - rm) / (2 * eps)
                scale = max(1.0, np.abs(fd).max())
                worst = max(worst, np.abs(jac - fd).max() / scale)
        assert worst < 1e-5

    def test_batch_kernel_matches_single_factors(self, rng):
        poses = {0: random_pose(rng), 1: random_pose(rng), 2: random_pose(rng)}
        fs = [
            random_factor(rng, PLANAR if rng.random() < 0.5 else POINT,
                          k=int(rng.integers(0, 2)), i=2)
            for _ in range(40)
        ]
        batch = FactorBatch.from_factors(fs)
        g = Graph(values=dict(poses))
        g.add_batch(batch)
        # oracle: accumulate H, g, cost from the per-factor functions
        ids = [0, 1, 2]
        h_want = np.zeros((18, 18))
        g_want = np.zeros(18)
        c_want = 0.0
        for f in fs:
            r, j_k, j_i = residual_of(poses[f.k], poses[f.i], f)
            sk, si = ids.index(f.k), ids.index(f.i)
            jall = np.zeros((len(r), 18))
            jall[:, 6 * sk : 6 * sk + 6] = j_k
            jall[:, 6 * si : 6 * si + 6] = j_i
            h_want += jall.T @ jall
            g_want += jall.T @ r
            c_want += float(r @ r)
        h_got, g_got, c_got = FG._match_normal_eqs([batch], poses, ids)
        np.testing.assert_allclose(h_got, h_want, rtol=1e-10, atol=1e-9)
        np.testing.assert_allclose(g_got, g_want, rtol=1e-10, atol=1e-9)
        assert abs(c_got - c_want) < 1e-9 * max(1.0, c_want)
        assert abs(g.cost() - c_want) < 1e-9 * max(1.0, c_want)


class TestLinearize:
    def test_reproduces_residual_at_linearization_point(self, rng):
        values = {0: random_pose(rng), 1: random_pose(rng)}
        for kind in (PLANAR, POINT):
            f = random_factor(rng, kind)
            lf = linearize(f, values)
            want, _, _ = residual_of(values[0], values[1], f)
            np.testing.assert_allclose(lf.residual_at(values), want, atol=1e-12)

    def test_zero_residual_factor(self, rng):
        x_k, x_i = random_pose(rng), random_pose(rng)
        p_k = rng.uniform(-2, 2, 3)
        # choose p_i so the transformed points coincide
        w = x_k.rotation @ p_k + x_k.translation
        p_i = x_i.rotation.T @ (w - x_i.translation)
        f = MatchFactor(POINT, 0, 1, p_k, p_i)
        lf = linearize(f, {0: x_k, 1: x_i})
        np.testing.assert_allclose(lf.residual, np.zeros(3), atol=1e-12)

    def test_taylor_remainder(self, rng):
        values = {0: random_pose(rng), 1: random_pose(rng)}
        for kind in (PLANAR, POINT):
            for scale in (1e-3, 3e-4, 1e-4):
                f = random_factor(rng, kind)
                lf = linearize(f, values)
                d0 = rng.normal(size=6)
                d1 = rng.normal(size=6)
                d0 *= scale / np.linalg.norm(d0)
                d1 *= scale / np.linalg.norm(d1)
                moved = {
                    0: geometry.retract(values[0], d0),
                    1: geometry.retract(values[1], d1),
                }
                lin = lf.residual_at(moved)
                nonlin = residual_of(moved[0], moved[1], f)[0]
                norm = np.sqrt(np.linalg.norm(d0) ** 2 + np.linalg.norm(d1) ** 2)
                assert np.abs(lin - nonlin).max() < 10.0 * norm**2


def translation_prior(ids, rho_weight, rho_targets, theta_weight=1e3):
    """Prior pinning all rotations and pulling translations to targets.

    Residual rows: theta_weight * theta_j and rho_weight * (t_j - target_j),
    expressed in square-root form about identity linearization values.
    """
    n = len(ids)
    a = np.zeros((6 * n, 6 * n))
    b = np.zeros(6 * n)
    for q in range(n):
        a[6 * q : 6 * q + 3, 6 * q : 6 * q + 3] = theta_weight * np.eye(3)
        a[6 * q + 3 : 6 * q + 6, 6 * q + 3 : 6 * q + 6] = rho_weight * np.eye(3)
        b[6 * q + 3 : 6 * q + 6] = -rho_weight * np.asarray(rho_targets[q])
    return PriorFactor(
        ids=tuple(ids),
        sqrt_info=a,
        offset=b,
        lin_values={pid: identity() for pid in ids},
    )


def translation_batch(k, i):
    """Point factor whose residual is t_i - t_k at identity rotations."""
    return FactorBatch(
        kinds=np.array([POINT], dtype=np.int64),
        k_ids=np.array([k], dtype=np.int64),
        i_ids=np.array([i], dtype=np.int64),
        p_k=np.zeros((1, 3)),
        p_i=np.zeros((1, 3)),
        n_k=np.zeros((1, 3)),
    )


def build_translation_graph(rng, n_poses, extra_edges=3, start_noise=0.5):
    """Exactly-linear graph: identity rotations, translation-only factors."""
    g = Graph()
    targets = [rng.uniform(-2, 2, 3) for _ in range(n_poses)]
    for pid in range(n_poses):
        g.add_pose(pid, Pose(np.eye(3), rng.uniform(-start_noise, start_noise, 3)))
    g.set_prior(translation_prior(range(n_poses), rho_weight=0.7, rho_targets=targets))
    for pid in range(n_poses - 1):
        g.add_batch(translation_batch(pid, pid + 1))
    for _ in range(extra_edges):
        k = int(rng.integers(0, n_poses - 1))
        i = int(rng.integers(k + 1, n_poses))
        g.add_batch(translation_batch(k, i))
    return g, targets


def translation_oracle(graph):
    """Dense linear-algebra solve of a translation-only graph."""
    ids = sorted(graph.values)
    n = len(ids)
    h = np.zeros((3 * n, 3 * n))
    g = np.zeros(3 * n)
    for batch in graph.batches:
        for k, i in zip(batch.k_ids, batch.i_ids):
            sk, si = ids.index(k), ids.index(i)
            j = np.zeros((3, 3 * n))
            j[:, 3 * sk : 3 * sk + 3] = -np.eye(3)
            j[:, 3 * si : 3 * si + 3] = np.eye(3)
            r = graph.values[i].translation - graph.values[k].translation
            h += j.T @ j
            g += j.T @ r
    prior = graph.prior
    for q, pid in enumerate(prior.ids):
        s = ids.index(pid)
        w = prior.sqrt_info[6 * q + 3, 6 * q + 3]
        r = w * graph.values[pid].translation + prior.offset[6 * q + 3 : 6 * q + 6]
        h[3 * s : 3 * s + 3, 3 * s : 3 * s + 3] += w * w * np.eye(3)
        g[3 * s : 3 * s + 3] += w * r
    delta = np.linalg.solve(h, -g)
    return {
        pid: graph.values[pid].translation + delta[3 * s : 3 * s + 3]
        for s, pid in enumerate(ids)
    }


class TestOptimize:
    def test_zero_residual_graph_unchanged(self, rng):
        x_i = random_pose(rng)
        g = Graph(values={0: identity(), 1: x_i})
        fs = []
        for _ in range(8):
            p_k = rng.uniform(-3, 3, 3)
            p_i = x_i.rotation.T @ (p_k - x_i.translation)
            fs.append(MatchFactor(POINT, 0, 1, p_k, p_i))
        g.add_batch(FactorBatch.from_factors(fs))
        before = {k: v.copy() for k, v in g.values.items()}
        res = optimize(g, "full")
        assert res.n_accepted == 0 and res.converged
        assert res.cost_trace[0] < 1e-18
        for k in before:
            np.testing.assert_array_equal(g.values[k].matrix(), before[k].matrix())

    def test_registration_recovers_truth(self, rng):
        x_true = random_pose(rng, max_angle=1.0, scale=2.0)
        pts = rng.uniform(-4, 4, (12, 3))
        fs = [
            MatchFactor(POINT, 0, 1, p, x_true.rotation.T @ (p - x_true.translation))
            for p in pts
        ]
        start = geometry.retract(x_true, 0.1 * rng.normal(size=6))
        g = Graph(values={0: identity(), 1: start})
        g.add_batch(FactorBatch.from_factors(fs))
        res = optimize(g, "full", OptimizeSettings(max_iters=50, step_tol=1e-12))
        # closed-form absolute-orientation oracle on the same correspondences
        src = np.array([f.p_i for f in fs])
        dst = pts
        mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
        u, _, vt = np.linalg.svd((dst - mu_d).T @ (src - mu_s))
        s = np.diag([1.0, 1.0, np.linalg.det(u @ vt)])
        r_oracle = u @ s @ vt
        t_oracle = mu_d - r_oracle @ mu_s
        got = g.values[1]
        assert res.cost_trace[-1] < 1e-16
        np.testing.assert_allclose(got.rotation, r_oracle, atol=1e-6)
        np.testing.assert_allclose(got.rotation, x_true.rotation, atol=1e-6)
        np.testing.assert_allclose(got.translation, t_oracle, atol=1e-6)
        np.testing.assert_allclose(got.translation, x_true.translation, atol=1e-6)

    def test_monotone_cost_trace(self, rng):
        x_true = random_pose(rng, max_angle=0.8, scale=2.0)
        fs = []
        for _ in range(30):
            p_k = rng.uniform(-4, 4, 3)
            p_i = x_true.rotation.T @ (p_k - x_true.translation)
            p_i = p_i + 0.05 * rng.normal(size=3)
            fs.append(MatchFactor(POINT, 0, 1, p_k, p_i))
        g = Graph(values={0: identity(), 1: geometry.retract(x_true, 0.3 * rng.normal(size=6))})
        g.add_batch(FactorBatch.from_factors(fs))
        res = optimize(g, "full")
        trace = np.array(res.cost_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) <= 0)

    def test_degenerate_geometry_names_pose(self, rng):
        # planar factors with one shared normal leave 2 translation dofs free
        n = np.array([1.0, 0.0, 0.0])
        fs = [
            MatchFactor(PLANAR, 0, 1, rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3), n)
            for _ in range(10)
        ]
        g = Graph(values={0: identity(), 1: random_pose(rng, 0.2, 0.5)})
        g.add_batch(FactorBatch.from_factors(fs))
        with pytest.raises(DegenerateGeometryError) as exc:
            optimize(g, "full")
        assert exc.value.pose_id == 1

    def test_gauge_pinned_without_prior(self, rng):
        x_true = random_pose(rng, 0.5, 1.0)
        pts = rng.uniform(-3, 3, (10, 3))
        fs = [
            MatchFactor(POINT, 0, 1, p, x_true.rotation.T @ (p - x_true.translation))
            for p in pts
        ]
        start0 = random_pose(rng, 0.3, 1.0)
        pose1 = geometry.retract(geometry.compose(start0, x_true), 0.2 * rng.normal(size=6))
        g = Graph(values={0: start0, 1: pose1})
        g.add_batch(FactorBatch.from_factors(fs))
        res = optimize(g, "full")
        assert res.pinned == 0
        np.testing.assert_array_equal(g.values[0].matrix(), start0.matrix())
        rel = geometry.relative(g.values[0], g.values[1])
        np.testing.assert_allclose(rel.matrix(), x_true.matrix(), atol=1e-8)

    def test_semi_equals_full_on_linear_graph(self, rng):
        g1, _ = build_translation_graph(rng, 5)
        g2 = Graph(
            values={k: v.copy() for k, v in g1.values.items()},
            batches=list(g1.batches),
            prior=g1.prior,
        )
        tight = OptimizeSettings(max_iters=60, step_tol=1e-14)
        optimize(g1, "full", tight)
        optimize(g2, "semi_linearized", tight)
        for pid in g1.values:
            np.testing.assert_allclose(
                g1.values[pid].translation, g2.values[pid].translation, atol=1e-9
            )
            np.testing.assert_allclose(
                g1.values[pid].rotation, g2.values[pid].rotation, atol=1e-12
            )

    def test_linear_graph_matches_dense_oracle(self, rng):
        g, _ = build_translation_graph(rng, 4)
        oracle = translation_oracle(g)
        optimize(g, "full", OptimizeSettings(max_iters=60, step_tol=1e-14))
        for pid, want in oracle.items():
            np.testing.assert_allclose(g.values[pid].translation, want, atol=1e-9)
            np.testing.assert_allclose(g.values[pid].rotation, np.eye(3), atol=1e-12)


class TestMarginalize:
    def test_linear_chain_matches_full_solve(self, rng):
        g_full, _ = build_translation_graph(rng, 3, extra_edges=0)
        g_marg = Graph(
            values={k: v.copy() for k, v in g_full.values.items()},
            batches=list(g_full.batches),
            prior=g_full.prior,
        )
        oracle = translation_oracle(g_full)
        marginalize(g_marg, {1})
        assert set(g_marg.values) == {0, 2}
        assert g_marg.prior is not None and set(g_marg.prior.ids) == {0, 2}
        optimize(g_marg, "full", OptimizeSettings(max_iters=60, step_tol=1e-14))
        for pid in (0, 2):
            np.testing.assert_allclose(
                g_marg.values[pid].translation, oracle[pid], atol=1e-8
            )

    def test_random_linear_graphs_match_full_solve(self, rng):
        for _ in range(10):
            n = int(rng.integers(3, 8))
            g_full, _ = build_translation_graph(rng, n)
            g_marg = Graph(
                values={k: v.copy() for k, v in g_full.values.items()},
                batches=list(g_full.batches),
                prior=g_full.prior,
            )
            drop = set(
                int(x) for x in rng.choice(n, size=int(rng.integers(1, n - 1)), replace=False)
            )
            oracle = translation_oracle(g_full)
            marginalize(g_marg, drop)
            optimize(g_marg, "full", OptimizeSettings(max_iters=80, step_tol=1e-14))
            for pid in g_marg.values:
                np.testing.assert_allclose(
                    g_marg.values[pid].translation, oracle[pid], atol=1e-8
                )

    def test_pose_without_factors_leaves_prior(self, rng):
        g, _ = build_translation_graph(rng, 3, extra_edges=0)
        lonely = 99
        g.add_pose(lonely, random_pose(rng))
        prior_before = g.prior
        # restrict the prior to poses 0..2 only; pose 99 touches nothing
        returned = marginalize(g, {lonely})
        assert returned is prior_before
        assert g.prior is prior_before
        assert lonely not in g.values

    def test_covariance_matches_joint_inverse(self, rng):
        g, _ = build_translation_graph(rng, 4, extra_edges=0)
        ids = sorted(g.values)
        # dense joint information over translations
        h = np.zeros((12, 12))
        for batch in g.batches:
            for k, i in zip(batch.k_ids, batch.i_ids):
                j = np.zeros((3, 12))
                j[:, 3 * k : 3 * k + 3] = -np.eye(3)
                j[:, 3 * i : 3 * i + 3] = np.eye(3)
                h += j.T @ j
        w = g.prior.sqrt_info[3, 3]
        h += w * w * np.eye(12)
        cov_joint = np.linalg.inv(h)
        keep = [0, 2, 3]
        keep_rows = np.concatenate([np.arange(3 * s, 3 * s + 3) for s in keep])
        want = cov_joint[np.ix_(keep_rows, keep_rows)]
        marginalize(g, {1})
        # information of the reduced graph: prior + untouched factors
        ids2 = sorted(g.values)
        h2 = np.zeros((9, 9))
        for batch in g.batches:
            for k, i in zip(batch.k_ids, batch.i_ids):
                sk, si = ids2.index(k), ids2.index(i)
                j = np.zeros((3, 9))
                j[:, 3 * sk : 3 * sk + 3] = -np.eye(3)
                j[:, 3 * si : 3 * si + 3] = np.eye(3)
                h2 += j.T @ j
        a = g.prior.sqrt_info
        h_prior = a.T @ a
        for qa, pa in enumerate(g.prior.ids):
            for qb, pb in enumerate(g.prior.ids):
                sa, sb = ids2.index(pa), ids2.index(pb)
                h2[3 * sa : 3 * sa + 3, 3 * sb : 3 * sb + 3] += h_prior[
                    6 * qa + 3 : 6 * qa + 6, 6 * qb + 3 : 6 * qb + 6
                ]
        got = np.linalg.inv(h2)
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_rank_deficient_elimination_warns(self, rng):
        g = Graph(values={0: identity(), 1: identity(), 2: identity()})
        g.set_prior(translation_prior([0], rho_weight=1.0, rho_targets=[np.zeros(3)]))
        # single planar factor constrains pose 1 in one dimension only
        f = MatchFactor(PLANAR, 1, 2, np.zeros(3), np.zeros(3), np.array([1.0, 0, 0]))
        g.add_factor(f)
        with pytest.warns(RuntimeWarning, match="rank-deficient"):
            marginalize(g, {1})
        assert 1 not in g.values

    def test_prior_offset_survives_roundtrip(self, rng):
        # marginalizing then optimizing must honor the folded gradient
        g, targets = build_translation_graph(rng, 3, extra_edges=0)
        oracle = translation_oracle(g)
        marginalize(g, {0})
        optimize(g, "full", OptimizeSettings(max_iters=60, step_tol=1e-14))
        for pid in g.values:
            np.testing.assert_allclose(
                g.values[pid].translation, oracle[pid], atol=1e-8
            )
