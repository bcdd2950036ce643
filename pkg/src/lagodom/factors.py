"""Pose-only factor graph: match residuals, LM solver, marginalization.

Poses are keyed by scan id. All residuals are expressed with right (local)
perturbations, twist columns ordered [rotation, translation]. Match factors
always point from an older target scan k to a newer source scan i (k < i),
which lets the batched kernels assume ordered slot pairs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import geometry, kernels
from .geometry import Pose

__all__ = [
    "MatchFactor",
    "FactorBatch",
    "LinearFactor",
    "PriorFactor",
    "Graph",
    "OptimizeSettings",
    "OptimizeResult",
    "DegenerateGeometryError",
    "planar_residual",
    "point_residual",
    "linearize",
    "optimize",
    "marginalize",
]

PLANAR = 0
POINT = 1


class DegenerateGeometryError(RuntimeError):
    """An optimization pose is unconstrained along some direction."""

    def __init__(self, pose_id, message=None):
        self.pose_id = pose_id
        super().__init__(message or f"degenerate geometry at pose {pose_id}")


@dataclass
class MatchFactor:
    """One feature correspondence between scans k (map side) and i."""

    kind: int  # PLANAR or POINT
    k: int
    i: int
    p_k: np.ndarray
    p_i: np.ndarray
    n_k: np.ndarray | None = None

    def __post_init__(self):
        if self.k == self.i:
            raise ValueError("match factor must join two distinct poses")
        if self.kind == PLANAR and self.n_k is None:
            raise ValueError("planar factor needs a map-side normal")


@dataclass
class FactorBatch:
    """Columnar block of match factors; the unit the solver kernels consume.

    All arrays share length F; n_k rows for point factors are ignored.
    """

    kinds: np.ndarray
    k_ids: np.ndarray
    i_ids: np.ndarray
    p_k: np.ndarray
    p_i: np.ndarray
    n_k: np.ndarray

    def __post_init__(self):
        if np.any(self.k_ids >= self.i_ids):
            raise ValueError("batches require k_id < i_id per factor")

    def __len__(self):
        return len(self.kinds)

    @classmethod
    def from_factors(cls, factors):
        kinds = np.array([f.kind for f in factors], dtype=np.int64)
        return cls(
            kinds=kinds,
            k_ids=np.array([f.k for f in factors], dtype=np.int64),
            i_ids=np.array([f.i for f in factors], dtype=np.int64),
            p_k=np.array([f.p_k for f in factors], dtype=np.float64).reshape(-1, 3),
            p_i=np.array([f.p_i for f in factors], dtype=np.float64).reshape(-1, 3),
            n_k=np.array(
                [f.n_k if f.n_k is not None else np.zeros(3) for f in factors],
                dtype=np.float64,
            ).reshape(-1, 3),
        )

    def split(self, mask):
        """(rows where mask, rows where not mask)."""
        mask = np.asarray(mask, dtype=bool)

        def take(sel):
            return FactorBatch(
                self.kinds[sel], self.k_ids[sel], self.i_ids[sel],
                self.p_k[sel], self.p_i[sel], self.n_k[sel],
            )

        return take(mask), take(~mask)

    def pose_ids(self):
        return set(self.k_ids.tolist()) | set(self.i_ids.tolist())


@dataclass
class LinearFactor:
    """A factor frozen at a linearization point.

    residual_at(values) = residual + sum_j J_j * log(lin_j^-1 x_j); the
    Jacobian blocks never change.
    """

    ids: tuple
    jacobians: list
    residual: np.ndarray
    lin_values: dict

    def __post_init__(self):
        if len(self.ids) != len(self.jacobians):
            raise ValueError("one Jacobian block per involved pose")

    def residual_at(self, values):
        r = self.residual.copy()
        for pid, jac in zip(self.ids, self.jacobians):
            r += jac @ geometry.local(self.lin_values[pid], values[pid])
        return r


@dataclass
class PriorFactor:
    """Gaussian prior in square-root form from marginalized-out poses.

    residual_at(values) = sqrt_info @ stack(log(lin_j^-1 x_j)) + offset.
    Fixed at creation; never relinearized.
    """

    ids: tuple
    sqrt_info: np.ndarray
    offset: np.ndarray
    lin_values: dict

    def __post_init__(self):
        n = 6 * len(self.ids)
        if self.sqrt_info.shape != (n, n) or self.offset.shape != (n,):
            raise ValueError("prior dimensions must match involved poses")
        lower = np.tril(self.sqrt_info, -1)
        if np.abs(lower).max(initial=0.0) > 1e-12:
            raise ValueError("sqrt_info must be upper-triangular")
        if np.any(np.diag(self.sqrt_info) < 0):
            raise ValueError("sqrt_info diagonal must be non-negative")

    def delta(self, values):
        return np.concatenate(
            [geometry.local(self.lin_values[pid], values[pid]) for pid in self.ids]
        )

    def residual_at(self, values):
        return self.sqrt_info @ self.delta(values) + self.offset


@dataclass
class Graph:
    """Pose values plus match batches, frozen factors, and one prior."""

    values: dict = field(default_factory=dict)
    batches: list = field(default_factory=list)
    linear_factors: list = field(default_factory=list)
    prior: PriorFactor | None = None

    def add_pose(self, pid, pose):
        self.values[pid] = pose

    def add_factor(self, factor: MatchFactor):
        self.add_batch(FactorBatch.from_factors([factor]))

    def add_batch(self, batch: FactorBatch):
        if len(batch) == 0:
            return
        missing = batch.pose_ids() - set(self.values)
        if missing:
            raise KeyError(f"factors reference unknown poses {sorted(missing)}")
        self.batches.append(batch)

    def add_linear(self, factor: LinearFactor):
        missing = set(factor.ids) - set(self.values)
        if missing:
            raise KeyError(f"factors reference unknown poses {sorted(missing)}")
        self.linear_factors.append(factor)

    def set_prior(self, prior: PriorFactor):
        self.prior = prior

    def n_factors(self):
        return sum(len(b) for b in self.batches) + len(self.linear_factors) + (
            1 if self.prior is not None else 0
        )

    def cost(self, values=None):
        values = self.values if values is None else values
        ids = sorted(values)
        slot = {pid: s for s, pid in enumerate(ids)}
        rot = np.stack([values[p].rotation for p in ids]) if ids else np.zeros((0, 3, 3))
        tra = np.stack([values[p].translation for p in ids]) if ids else np.zeros((0, 3))
        total = 0.0
        for batch in self.batches:
            k = np.array([slot[p] for p in batch.k_ids], dtype=np.int64)
            i = np.array([slot[p] for p in batch.i_ids], dtype=np.int64)
            total += kernels.match_cost(
                rot, tra, batch.kinds, k, i, batch.p_k, batch.p_i, batch.n_k
            )
        for lf in self.linear_factors:
            r = lf.residual_at(values)
            total += float(r @ r)
        if self.prior is not None:
            r = self.prior.residual_at(values)
            total += float(r @ r)
        return total


def _transform(pose: Pose, p):
    return pose.rotation @ p + pose.translation


def planar_residual(x_k: Pose, x_i: Pose, f: MatchFactor):
    """Signed plane distance plus its (1, 6) Jacobians for k and i."""
    m = x_k.rotation @ f.n_k
    d = _transform(x_i, f.p_i) - _transform(x_k, f.p_k)
    r = float(m @ d)
    a = x_i.rotation.T @ m
    b = x_k.rotation.T @ d
    j_k = np.concatenate([np.cross(f.n_k, f.p_k) - np.cross(b, f.n_k), -f.n_k])
    j_i = np.concatenate([np.cross(f.p_i, a), a])
    return r, j_k[None, :], j_i[None, :]


def point_residual(x_k: Pose, x_i: Pose, f: MatchFactor):
    """Point difference residual plus its (3, 6) Jacobians for k and i."""
    r = _transform(x_i, f.p_i) - _transform(x_k, f.p_k)
    j_k = np.hstack([x_k.rotation @ geometry.skew(f.p_k), -x_k.rotation])
    j_i = np.hstack([-x_i.rotation @ geometry.skew(f.p_i), x_i.rotation])
    return r, j_k, j_i


def linearize(factor: MatchFactor, values) -> LinearFactor:
    """Freeze one match factor at the given values."""
    x_k, x_i = values[factor.k], values[factor.i]
    if factor.kind == PLANAR:
        r, j_k, j_i = planar_residual(x_k, x_i, factor)
        res = np.array([r])
    else:
        res, j_k, j_i = point_residual(x_k, x_i, factor)
    return LinearFactor(
        ids=(factor.k, factor.i),
        jacobians=[j_k, j_i],
        residual=np.asarray(res, dtype=np.float64),
        lin_values={factor.k: x_k.copy(), factor.i: x_i.copy()},
    )


def linearize_batches(batches, values) -> LinearFactor | None:
    """Collapse match batches into one frozen quadratic over their poses.

    The sum of the individual linearized factors has the same normal
    equations as this aggregate, and one dense factor is much cheaper to
    re-evaluate inside the solver loop.
    """
    batches = [b for b in batches if len(b)]
    if not batches:
        return None
    ids = sorted(set().union(*[b.pose_ids() for b in batches]))
    h, g, _ = _match_normal_eqs(batches, values, ids)
    # eigendecomposition square root: exact for the (always gauge-deficient)
    # relative-factor Hessian, unlike a regularized Cholesky
    lam, q = np.linalg.eigh(0.5 * (h + h.T))
    good = lam > 1e-12 * max(lam[-1], 1.0)
    a = np.sqrt(lam[good])[:, None] * q[:, good].T
    b_vec = (q[:, good].T @ g) / np.sqrt(lam[good])
    blocks = [a[:, 6 * s : 6 * s + 6] for s in range(len(ids))]
    return LinearFactor(
        ids=tuple(ids),
        jacobians=blocks,
        residual=b_vec,
        lin_values={pid: values[pid].copy() for pid in ids},
    )


def _match_normal_eqs(batches, values, ids):
    """H, g, cost of match batches over the slot order given by ids."""
    slot = {pid: s for s, pid in enumerate(ids)}
    rot = np.stack([values[p].rotation for p in ids])
    tra = np.stack([values[p].translation for p in ids])
    kinds = np.concatenate([b.kinds for b in batches])
    k = np.concatenate(
        [np.array([slot[p] for p in b.k_ids], dtype=np.int64) for b in batches]
    )
    i = np.concatenate(
        [np.array([slot[p] for p in b.i_ids], dtype=np.int64) for b in batches]
    )
    p_k = np.concatenate([b.p_k for b in batches])
    p_i = np.concatenate([b.p_i for b in batches])
    n_k = np.concatenate([b.n_k for b in batches])
    return kernels.match_system(rot, tra, kinds, k, i, p_k, p_i, n_k, len(ids))


def _linear_contribution(factor, values, ids, h, g):
    """Accumulate a frozen factor (LinearFactor or PriorFactor) into H, g."""
    slot = {pid: s for s, pid in enumerate(ids)}
    if isinstance(factor, PriorFactor):
        blocks = [
            factor.sqrt_info[:, 6 * q : 6 * q + 6] for q in range(len(factor.ids))
        ]
    else:
        blocks = factor.jacobians
    r = factor.residual_at(values)
    for pid_a, jac_a in zip(factor.ids, blocks):
        sa = slot[pid_a]
        g[6 * sa : 6 * sa + 6] += jac_a.T @ r
        for pid_b, jac_b in zip(factor.ids, blocks):
            sb = slot[pid_b]
            h[6 * sa : 6 * sa + 6, 6 * sb : 6 * sb + 6] += jac_a.T @ jac_b
    return float(r @ r)


@dataclass
class OptimizeSettings:
    max_iters: int = 30
    lambda0: float = 1e-4
    lambda_min: float = 1e-10
    lambda_max: float = 1e4
    step_tol: float = 1e-9
    grad_tol: float = 1e-12


@dataclass
class OptimizeResult:
    cost_trace: list
    n_accepted: int
    n_rejected: int
    converged: bool
    pinned: int | None


def _check_degenerate(h, ids, skip):
    for s, pid in enumerate(ids):
        if pid in skip:
            continue
        block = h[6 * s : 6 * s + 6, 6 * s : 6 * s + 6]
        eig = np.linalg.eigvalsh(block)
        if eig[0] <= 1e-10 * max(1.0, eig[-1]):
            raise DegenerateGeometryError(pid)


def optimize(graph: Graph, mode="full", settings: OptimizeSettings | None = None,
             fixed_ids=()):
    """Levenberg-Marquardt over the window; mutates graph.values.

    mode 'full' relinearizes every match factor each iteration. In
    'semi_linearized' the factors not touching the newest pose are frozen
    once at the entry values and enter the solve as a single aggregate
    linear factor; only the newest pose's factors stay nonlinear.
    Poses in fixed_ids are held constant (they still anchor the gauge).
    """
    settings = settings or OptimizeSettings()
    if graph.n_factors() == 0:
        raise ValueError("optimize needs at least one factor")
    values = graph.values
    ids = sorted(values)
    fixed = {pid for pid in fixed_ids if pid in values}
    pinned = None if (graph.prior is not None or fixed) else ids[0]

    if mode == "semi_linearized":
        newest = ids[-1]
        live = [b for b in graph.batches if len(b)]
        hot, stale = [], []
        for b in live:
            touch = (b.k_ids == newest) | (b.i_ids == newest)
            h_part, s_part = b.split(touch)
            if len(h_part):
                hot.append(h_part)
            if len(s_part):
                stale.append(s_part)
        frozen = list(graph.linear_factors)
        agg = linearize_batches(stale, values)
        if agg is not None:
            frozen.append(agg)
        nonlinear = hot
    elif mode == "full":
        nonlinear = [b for b in graph.batches if len(b)]
        frozen = list(graph.linear_factors)
    else:
        raise ValueError(f"unknown optimize mode {mode!r}")

    quadratics = frozen + ([graph.prior] if graph.prior is not None else [])

    def build(vals):
        h = np.zeros((6 * len(ids), 6 * len(ids)))
        g = np.zeros(6 * len(ids))
        cost = 0.0
        if nonlinear:
            h, g, cost = _match_normal_eqs(nonlinear, vals, ids)
        for q in quadratics:
            cost += _linear_contribution(q, vals, ids, h, g)
        return h, g, cost

    def cost_only(vals):
        total = 0.0
        if nonlinear:
            total = _match_normal_eqs(nonlinear, vals, ids)[2]
        for q in quadratics:
            r = q.residual_at(vals)
            total += float(r @ r)
        return total

    free = np.ones(6 * len(ids), dtype=bool)
    held = set(fixed)
    if pinned is not None:
        held.add(pinned)
    for pid in held:
        s = ids.index(pid)
        free[6 * s : 6 * s + 6] = False
    if not free.any():
        return OptimizeResult([graph.cost()], 0, 0, True, pinned)

    h, g, cost = build(values)
    _check_degenerate(h, ids, held)
    trace = [cost]
    lam = settings.lambda0
    accepted = rejected = 0
    converged = False
    h_free = h[np.ix_(free, free)]
    g_free = g[free]
    for _ in range(settings.max_iters):
        if np.abs(g_free).max(initial=0.0) < settings.grad_tol:
            converged = True
            break
        # Jacobi-scaled damped system: the window Hessian mixes scales of
        # 1e2..1e6 once marginalization priors accumulate, and the raw
        # normal equations lose the softest directions to roundoff
        diag = np.diag(h_free)
        scale = np.sqrt(np.maximum(diag, 1e-12 * max(diag.max(initial=0.0), 1.0)))
        h_s = h_free / scale[:, None] / scale[None, :]
        h_s[np.diag_indices_from(h_s)] += lam
        try:
            step = scipy.linalg.solve(h_s, -g_free / scale, assume_a="pos") / scale
        except np.linalg.LinAlgError:
            raise DegenerateGeometryError(None, "normal equations not positive definite")
        delta = np.zeros(6 * len(ids))
        delta[free] = step
        candidate = {
            pid: values[pid] if pid in held
            else geometry.retract(values[pid], delta[6 * s : 6 * s + 6])
            for s, pid in enumerate(ids)
        }
        new_cost = cost_only(candidate)
        if new_cost < cost:
            values.update(candidate)
            cost = new_cost
            trace.append(cost)
            accepted += 1
            lam = max(lam / 10.0, settings.lambda_min)
            if np.abs(step).max() < settings.step_tol:
                converged = True
                break
            h, g, _ = build(values)
            h_free = h[np.ix_(free, free)]
            g_free = g[free]
        else:
            rejected += 1
            lam = lam * 10.0
            if lam > settings.lambda_max:
                converged = False
                break
    return OptimizeResult(trace, accepted, rejected, converged, pinned)


def _sqrt_form(h, g):
    """Upper-triangular A and offset b with A.T A ~= H and A.T b ~= g.

    Eigen-directions below 1e-12 of the spectrum top are dropped outright.
    Lifting them with an absolute regularizer instead would add no
    information but wreck the conditioning of every later solve; the window
    gauge makes such directions routine. Dropped rows stay as zeros so the
    result keeps the square upper-triangular shape priors expect.
    """
    n = len(h)
    lam, q = np.linalg.eigh(0.5 * (h + h.T))
    good = lam > 1e-12 * max(lam[-1], 0.0)
    if not good.any():
        return np.zeros((n, n)), np.zeros(n)
    root = np.sqrt(lam[good])
    a_r = root[:, None] * q[:, good].T
    b_r = (q[:, good].T @ g) / root
    q_f, r_f = scipy.linalg.qr(a_r, mode="economic")
    sign = np.where(np.diag(r_f) < 0.0, -1.0, 1.0)
    a = np.zeros((n, n))
    a[: len(r_f)] = sign[:, None] * r_f
    b = np.zeros(n)
    b[: len(r_f)] = sign * (q_f.T @ b_r)
    return a, b


def marginalize(graph: Graph, drop_ids) -> PriorFactor | None:
    """Eliminate poses by Schur complement; mutates the graph.

    Factors touching a dropped pose, together with the existing prior, are
    linearized at current values and collapsed into a new PriorFactor over
    the remaining poses they involve. Untouched factors stay as they are.
    Dropped poses with no factors at all just disappear.
    """
    drop = set(drop_ids)
    missing = drop - set(graph.values)
    if missing:
        raise KeyError(f"cannot marginalize unknown poses {sorted(missing)}")

    touched_batches, kept_batches = [], []
    for b in graph.batches:
        inside = np.isin(b.k_ids, sorted(drop)) | np.isin(b.i_ids, sorted(drop))
        t_part, k_part = b.split(inside)
        if len(t_part):
            touched_batches.append(t_part)
        if len(k_part):
            kept_batches.append(k_part)
    touched_linear = [
        lf for lf in graph.linear_factors if drop & set(lf.ids)
    ]
    kept_linear = [lf for lf in graph.linear_factors if not (drop & set(lf.ids))]
    prior_touched = graph.prior is not None and bool(drop & set(graph.prior.ids))

    nothing_eliminated = not touched_batches and not touched_linear and not prior_touched
    if nothing_eliminated:
        for pid in drop:
            del graph.values[pid]
        graph.batches = kept_batches
        graph.linear_factors = kept_linear
        return graph.prior

    # fold the prior whenever something is eliminated, keeping one prior total
    parts = list(touched_linear)
    if graph.prior is not None:
        parts.append(graph.prior)
    involved = set()
    for b in touched_batches:
        involved |= b.pose_ids()
    for q in parts:
        involved |= set(q.ids)
    keep = sorted(involved - drop)
    order = keep + sorted(drop & involved)
    n = len(order)

    # kernels require slot order to follow id order (k < i per factor);
    # build sorted, then permute so kept poses come first
    build_order = sorted(involved)
    h = np.zeros((6 * n, 6 * n))
    g = np.zeros(6 * n)
    if touched_batches:
        h, g, _ = _match_normal_eqs(touched_batches, graph.values, build_order)
    for q in parts:
        _linear_contribution(q, graph.values, build_order, h, g)
    perm = np.concatenate(
        [np.arange(6) + 6 * build_order.index(pid) for pid in order]
    )
    h = h[np.ix_(perm, perm)]
    g = g[perm]

    nk = 6 * len(keep)
    h_kk = h[:nk, :nk]
    h_ke = h[:nk, nk:]
    h_ee = h[nk:, nk:]
    g_k = g[:nk]
    g_e = g[nk:]
    # pseudo-inverse of the eliminated block: its null directions are shared
    # with the cross term in exact arithmetic, so dropping them is the Schur
    # complement's correct limit (a regularized inverse would amplify the
    # roundoff in the cross term by the inverse regularizer instead)
    lam_e, q_e = np.linalg.eigh(0.5 * (h_ee + h_ee.T))
    good_e = lam_e > 1e-12 * max(lam_e[-1], 0.0)
    if not good_e.all():
        warnings.warn(
            f"rank-deficient eliminated block; dropping "
            f"{int((~good_e).sum())} null directions",
            RuntimeWarning,
            stacklevel=2,
        )
    inv_ee = (q_e[:, good_e] / lam_e[good_e]) @ q_e[:, good_e].T
    h_marg = h_kk - h_ke @ inv_ee @ h_ke.T
    g_marg = g_k - h_ke @ (inv_ee @ g_e)
    h_marg = 0.5 * (h_marg + h_marg.T)

    prior = None
    if keep:
        a, b_vec = _sqrt_form(h_marg, g_marg)
        prior = PriorFactor(
            ids=tuple(keep),
            sqrt_info=a,
            offset=b_vec,
            lin_values={pid: graph.values[pid].copy() for pid in keep},
        )

    for pid in drop:
        del graph.values[pid]
    graph.batches = kept_batches
    graph.linear_factors = kept_linear
    graph.prior = prior
    return prior
