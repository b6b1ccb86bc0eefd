"""Cylinder norms of solutions and inhomogeneities.

Cylinders are ``Q_R(x) = (R^4/2, R^4] x B_R(x)`` with ``B_R`` the rho-ball;
``|Q_R(x)|`` is their Lebesgue measure, which makes ``X_p`` scale like ``lam``
and ``Y_p`` like ``1/lam`` under ``(t, x) -> (lam^2 t, lam x)``.  All sups are
maxima over a finite :class:`SupSamplingPlan`, hence certified lower bounds of
the continuous quantities.  Spatial integrals use the grid quadrature weights
restricted to the nodes inside the ball (the discrete mask measure is used for
``|B_R|`` as well, so averages of constants are exact); time integrals use the
snapshots in the window with their local spacing.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CZIndex, cz_indices
from .grid import Field, Grid


@dataclass(frozen=True)
class SupSamplingPlan:
    """Radii and center node indices (flat, into ``grid.points()``)."""

    radii: tuple
    centers: tuple
    T: float

    def __post_init__(self):
        if any(not (0 < R ** 4 <= self.T * (1 + 1e-12)) for R in self.radii):
            raise ValueError("all sampled radii need R^4 in (0, T]")


@dataclass
class NormSample:
    R: float
    center: np.ndarray
    contributions: dict
    total: float


@dataclass
class NormReport:
    value: float
    samples: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_csv(self, path) -> Path:
        path = Path(path)
        keys = list(self.samples[0].contributions) if self.samples else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = len(self.samples[0].center) if self.samples else 0
            w.writerow(["R"] + [f"x{i + 1}" for i in range(n)] + [str(k) for k in keys] + ["total"])
            for s in self.samples:
                w.writerow([repr(s.R)] + [repr(float(c)) for c in s.center]
                           + [repr(s.contributions[k]) for k in keys] + [repr(s.total)])
        return path


def _wrap(d, period):
    return np.mod(d + period / 2, period) - period / 2


def _rho_to(P, c, hP, hc, period=None):
    """rho between points ``P`` (m, n) and center ``c``, with heights ``hP``, ``hc``."""
    d = P - c
    if period is not None and P.shape[1] > 1:
        d[:, :-1] = _wrap(d[:, :-1], period)
    D = np.sqrt(np.sum(d * d, axis=1))
    den = np.sqrt(np.maximum(hP, 0)) + np.sqrt(max(hc, 0)) + np.sqrt(D)
    return np.where(D > 0, D / np.where(den > 0, den, 1.0), 0.0)


def default_plan(grid: Grid, times, n_radii: int | None = None, stride: int | None = None,
                 xn_max: float | None = None, min_snapshots: int = 4) -> SupSamplingPlan:
    """Dyadic radii ``R^4 = T 2^-k`` whose window holds ``min_snapshots``
    snapshots, and every ``stride``-th node with ``x_n <= xn_max``."""
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    radii = []
    k = 0
    while n_radii is None or k < n_radii:
        R4 = T * 2.0 ** (-k)
        cnt = np.sum((times > R4 / 2) & (times <= R4 * (1 + 1e-12)))
        if cnt < min_snapshots:
            break
        radii.append(R4 ** 0.25)
        k += 1
    stride = stride if stride is not None else max(1, grid.M // 64)
    xn_max = grid.Xmax / 4 if xn_max is None else xn_max
    idx = np.arange(grid.size).reshape(grid.shape)
    sl = tuple([slice(None, None, max(1, grid.K // 8))] * (grid.n - 1) + [slice(None, None, stride)])
    sub = idx[sl]
    xs = grid.coords()[-1].ravel()
    cen = tuple(int(i) for i in sub.ravel() if xs[i] <= xn_max)
    return SupSamplingPlan(tuple(radii), cen, T)


def lipschitz_seminorm(g: Field) -> float:
    """``max |grad g|`` over the nodes."""
    grid = g.grid
    n = grid.n
    sq = 0.0
    for i in range(n):
        a = [0] * n
        a[i] = 1
        sq = sq + grid.diff(g.values, tuple(a)) ** 2
    return float(np.sqrt(np.max(sq)))


def _time_weights(times, sel):
    """Rectangle weights of the selected snapshots (local spacing)."""
    t = np.asarray(times)
    dt = np.gradient(t) if len(t) > 1 else np.ones(1)
    return dt[sel]


def _derivative_blocks(traj, indices, p):
    """``|d_t^l d^alpha u|^p`` per CZ index as arrays (time, grid)."""
    grid = traj.grid
    out = {}
    dtu = None
    for idx in indices:
        if idx.l == 0:
            D = np.stack([grid.diff(v, idx.alpha) for v in traj.values])
        elif idx.l == 1:
            if dtu is None:
                dtu = np.gradient(traj.values, traj.times, axis=0)
            D = np.stack([grid.diff(v, idx.alpha) for v in dtu]) if sum(idx.alpha) else dtu
        else:
            raise ValueError("time derivatives up to order 1")
        out[idx] = np.abs(D) ** p
    return out


def _cylinder_sup(grid, times, blocks, weights_fn, plan, p, heights=None, points=None,
                  jacobian=None, clip_fn=None):
    """Shared engine: for every (R, center) combine weighted block integrals.

    ``blocks`` maps a key to (array (time, grid), sigma): the integral is
    ``int int |.|^p x_n^sigma``.  ``weights_fn(key, R, xc)`` returns the
    prefactor.  ``points`` (optional, per snapshot) replace the grid nodes by
    mapped positions (film side), ``heights`` the heights entering rho, and
    ``jacobian`` multiplies the spatial weights.
    """
    times = np.asarray(times)
    P0 = grid.points()
    h0 = P0[:, -1]
    W0 = grid.weights(0.0).ravel()
    Ws = {k: grid.weights(sig).ravel() for k, (_, sig) in blocks.items()}
    period = grid.Lambda if (grid.n > 1 and grid.periodic) else None
    centers = np.asarray(plan.centers, dtype=int)
    report = NormReport(0.0)
    if len(centers) == 0:
        return report
    hc = h0[centers]

    def masks(P, hP, R):
        return np.stack([_rho_to(P, P[c], hP, hP[c], period) < R for c in centers])

    static = points is None and jacobian is None
    if static:
        hP = h0 if heights is None else heights[0]
        dist_cache = np.stack([_rho_to(P0, P0[c], hP, hP[c], period) for c in centers])
    for R in plan.radii:
        R4 = R ** 4
        sel = np.nonzero((times > R4 / 2) & (times <= R4 * (1 + 1e-12)))[0]
        if len(sel) < 2:
            report.skipped.append((R, "fewer than two snapshots in the window"))
            continue
        dts = _time_weights(times, sel)
        if static:
            mk = (dist_cache < R).astype(float)
            vol = dts.sum() * (mk @ W0)
            acc = {k: mk @ (Ws[k] * np.tensordot(dts, arr[sel].reshape(len(sel), -1), axes=1))
                   for k, (arr, _) in blocks.items()}
        else:
            vol = np.zeros(len(centers))
            acc = {k: np.zeros(len(centers)) for k in blocks}
            for kk, dt in zip(sel, dts):
                mk = masks(points[kk], heights[kk], R).astype(float)
                jac = 1.0 if jacobian is None else jacobian[kk]
                vol += dt * (mk @ (W0 * jac))
                for k, (arr, _) in blocks.items():
                    acc[k] += dt * (mk @ (Ws[k] * jac * arr[kk].ravel()))
        for m, ci in enumerate(centers):
            if vol[m] <= 0:
                continue
            contrib = {k: float(weights_fn(k, R, hc[m]) * max(acc[k][m], 0.0) ** (1 / p)
                                * vol[m] ** (-1 / p)) for k in blocks}
            total = float(sum(contrib.values()))
            report.samples.append(NormSample(R, P0[ci], contrib, total))
            report.value = max(report.value, total)
            if clip_fn is not None:
                clip_fn(R, ci)
    return report


def _check_p(grid, p):
    if not p >= 1:
        raise ValueError("need p >= 1")
    import warnings
    if p <= grid.n + 2:
        warnings.warn(f"p={p} <= n+2 is outside the theory-matching regime", stacklevel=3)


def xp_norm(traj, p: float, plan: SupSamplingPlan, return_report: bool = False):
    """``||grad u||_inf + sup |Q|^-1/p sum_CZ R^{4l+|a|-1} (R+sqrt x_n)^{|a|-2j-1} ||d_t^l d^a u||_{L^p(Q, mu_jp)}``."""
    grid = traj.grid
    _check_p(grid, p)
    grad = max(lipschitz_seminorm(traj.field(k)) for k in range(len(traj)))
    indices = cz_indices(grid.n)
    D = _derivative_blocks(traj, indices, p)
    blocks = {idx: (D[idx], idx.j * p) for idx in indices}

    def wfn(idx: CZIndex, R, xn):
        a = sum(idx.alpha)
        return R ** (4 * idx.l + a - 1) * (R + np.sqrt(xn)) ** (a - 2 * idx.j - 1)

    rep = _cylinder_sup(grid, traj.times, blocks, wfn, plan, p)
    rep.value = grad + rep.value
    return rep if return_report else rep.value


def yp_norm(ftraj, p: float, plan: SupSamplingPlan, return_report: bool = False):
    """``sup |Q|^-1/p R^3 (R + sqrt x_n)^-1 ||f||_{L^p(Q)}``."""
    grid = ftraj.grid
    _check_p(grid, p)
    blocks = {"f": (np.abs(ftraj.values) ** p, 0.0)}
    rep = _cylinder_sup(grid, ftraj.times, blocks,
                        lambda k, R, xn: R ** 3 / (R + np.sqrt(xn)), plan, p)
    return rep if return_report else rep.value


def quadratic_bound_check(traj, p: float, plan: SupSamplingPlan, traj2=None) -> float:
    """``||f[u]||_Y / ||u||_X^2``, or the difference quotient
    ``||f[u1] - f[u2]||_Y / ((||u1||_X + ||u2||_X) ||u1 - u2||_X)``."""
    from .evolution import Trajectory
    from .hodograph import nonlinearity

    def F(tr):
        return Trajectory(tr.grid, tr.times,
                          np.stack([nonlinearity(tr.field(k)).values for k in range(len(tr))]))

    x1 = xp_norm(traj, p, plan)
    if x1 > 0.5:
        raise ValueError(f"||u||_X = {x1:.3g} exceeds 1/2")
    if traj2 is None:
        if x1 == 0:
            raise ValueError("zero denominator: u = 0")
        return yp_norm(F(traj), p, plan) / x1 ** 2
    x2 = xp_norm(traj2, p, plan)
    dx = xp_norm(traj - traj2, p, plan)
    den = (x1 + x2) * dx
    if den == 0:
        raise ValueError("zero denominator")
    return yp_norm(F(traj) - F(traj2), p, plan) / den


def _film_derivatives(grid, u_vals, ut_vals, indices):
    """y-derivatives of ``hh`` at the mapped points, via the chain rule."""
    from .hodograph import Pullback
    P = Pullback(grid, u_vals)
    gt = P.grad_hh()
    cache = {}

    def dalpha(alpha):
        alpha = tuple(alpha)
        if alpha in cache:
            return cache[alpha]
        if sum(alpha) == 1:
            out = gt[alpha.index(1)]
        else:
            i = next(k for k, a in enumerate(alpha) if a)
            rest = list(alpha)
            rest[i] -= 1
            out = P.dy(dalpha(tuple(rest)), i)
        cache[alpha] = out
        return out

    xn = grid.coords()[-1]
    out = {}
    for idx in indices:
        if idx.l == 1:
            D = -ut_vals / P.vn
            if sum(idx.alpha):
                raise ValueError("mixed time-space film derivatives are not part of the CZ set")
        else:
            D = dalpha(idx.alpha)
        out[idx] = xn ** idx.j * D
    return out, P.vn


def film_xp_seminorm(traj, p: float, plan: SupSamplingPlan, return_report: bool = False):
    """``[sqrt h]_{X_p^1}`` of a film trajectory given by its perturbations.

    ``traj`` is a perturbation :class:`Trajectory` (or a list of FilmState,
    transformed forward first).  Derivatives of ``hh = sqrt h`` are computed
    at the image points ``(x', v(x))`` by the chain rule, so only the
    positivity set is used; integrals over y-cylinders become x-integrals
    with the Jacobian ``v_n``.  Balls use rho with ``hh`` in place of the
    height.  Cylinders reaching the contact line are clipped and counted in
    ``report.skipped``.
    """
    from .evolution import Trajectory
    from .hodograph import FilmState, forward_transform
    if isinstance(traj, (list, tuple)) and traj and isinstance(traj[0], FilmState):
        fields = [forward_transform(h) for h in traj]
        traj = Trajectory(fields[0].grid, [h.s for h in traj], np.stack([f.values for f in fields]))
    grid = traj.grid
    _check_p(grid, p)
    indices = cz_indices(grid.n)
    ut = np.gradient(traj.values, traj.times, axis=0) if len(traj) > 1 else np.zeros_like(traj.values)
    X = grid.coords()
    blocks = {idx: [] for idx in indices}
    points, jac = [], []
    for k in range(len(traj)):
        D, vn = _film_derivatives(grid, traj.values[k], ut[k], indices)
        for idx in indices:
            blocks[idx].append(np.abs(D[idx]) ** p)
        Y = np.stack([c.ravel() for c in X[:-1]] + [(X[-1] + traj.values[k]).ravel()], axis=1)
        points.append(Y)
        jac.append(vn.ravel())
    blocks = {idx: (np.stack(v), 0.0) for idx, v in blocks.items()}
    heights = [grid.points()[:, -1]] * len(traj)

    def wfn(idx, R, hh):
        a = sum(idx.alpha)
        return R ** (4 * idx.l + a - 1) * (R + np.sqrt(hh)) ** (a - 2 * idx.j - 1)

    clipped = []
    contact = grid.coords()[-1].ravel() == 0

    def clip(R, ci):
        Y = points[-1]
        d = _rho_to(Y[contact], Y[ci], np.zeros(int(contact.sum())), heights[-1][ci],
                    grid.Lambda if grid.n > 1 else None)
        if np.any(d < R):
            clipped.append((R, ci))

    rep = _cylinder_sup(grid, traj.times, blocks, wfn, plan, p, heights=heights,
                        points=points, jacobian=jac, clip_fn=clip)
    rep.skipped.extend(("clipped", R, ci) for R, ci in clipped)
    return rep if return_report else rep.value


def yp_scaling_ratio(f, grid: Grid, times, lam: float, p: float, matched: bool = True,
                     **plan_kwargs) -> float:
    """``lam ||f o T_lam||_Y / ||f||_Y`` for an analytic ``f(t, coords)``.

    ``f o T_lam`` is sampled directly at ``(lam^2 t, lam x)`` over ``times / lam^2``.
    With ``matched`` it lives on the image box (``Xmax / lam``, ``Lambda / lam``,
    same node counts) and the plan centers are the images of the original ones,
    so rho-balls map onto rho-balls node for node; otherwise the original grid and
    a fresh default plan are used.  The cylinder norm predicts a ratio of one.
    """
    times = np.asarray(times, dtype=float)
    from .evolution import Trajectory

    def traj(g, ts, s):
        C = g.coords()
        return Trajectory(g, ts, np.stack([np.asarray(f(s ** 2 * t, [s * c for c in C]), float)
                                           * np.ones(g.shape) for t in ts]))

    plan = default_plan(grid, times, **plan_kwargs)
    base = yp_norm(traj(grid, times, 1.0), p, plan)
    t2 = times / lam ** 2
    if matched:
        g2 = Grid(grid.n, grid.M, grid.Xmax / lam, grid.gamma, grid.K, grid.Lambda / lam,
                  grid.periodic, grid.width)
        plan2 = SupSamplingPlan(tuple(R / np.sqrt(lam) for R in plan.radii), plan.centers,
                                float(t2[-1]))
    else:
        g2 = grid
        plan2 = default_plan(grid, t2, **plan_kwargs)
    scaled = yp_norm(traj(g2, t2, lam), p, plan2)
    if base == 0:
        raise ValueError("f has zero Y_p norm on the plan")
    return float(lam * scaled / base)
