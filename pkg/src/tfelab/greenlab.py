"""Empirical Green-function probes of ``d_t u + L u = 0``.

A probe evolves an L1(dy)-normalized bump at ``y0`` so that ``u(t, x)``
approximates ``G(t, x, 0, y0)``.  Samples are normalized by
``|B_R(x)|_1^{1/2} |B_R(y0)|_1^{1/2} / y0_n`` with ``R = t^{1/4}``, where for
a source touching the boundary ``y0_n`` is replaced by the bump's first
moment ``int b(y) y_n dy``.  The envelope of the normalized kernel is fitted
by ``log N = a - b (rho^4 / t)^q`` on shell maxima (the kernel changes sign,
so pointwise logarithms are not usable).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Ball, ball_measure, ball_measure_1d, rho
from .grid import Field, Grid
from .linop import OperatorMatrix

EPS = np.finfo(float).eps


@dataclass
class KernelProbe:
    grid: Grid
    source: np.ndarray
    width: float
    t: float
    u: Field
    moment: float
    rho: np.ndarray = field(repr=False, default=None)
    normalized: np.ndarray = field(repr=False, default=None)

    def to_csv(self, path) -> Path:
        path = Path(path)
        pts = self.grid.points()
        data = np.column_stack([pts, self.rho, np.full(len(pts), self.t),
                                self.u.values.ravel(), self.normalized])
        head = ",".join([f"x{i + 1}" for i in range(self.grid.n)] + ["rho", "t", "raw", "normalized"])
        np.savetxt(path, data, delimiter=",", header=head, comments="", fmt="%.17g")
        return path


@dataclass
class EnvelopeFit:
    a: float
    b: float
    q: float
    r2: float
    samples: int

    def to_text(self) -> str:
        return json.dumps({"a": self.a, "b": self.b, "q": self.q, "r2": self.r2, "samples": self.samples})


def _bump(r):
    r = np.asarray(r, float)
    inside = np.abs(r) < 1
    return np.where(inside, np.exp(1 - 1 / np.where(inside, 1 - r * r, 1.0)), 0.0)


def source_bump(grid: Grid, y0, w: float):
    """L1(dy)-normalized smooth bump of radius ``w`` at ``y0`` and its first
    vertical moment.  A source with ``y0_n < w`` is clipped by the boundary."""
    y0 = np.atleast_1d(np.asarray(y0, float))
    if len(y0) != grid.n:
        raise ValueError("source dimension does not match the grid")
    X = grid.coords()
    r2 = 0.0
    for i in range(grid.n):
        d = X[i] - y0[i]
        if i < grid.n - 1 and grid.periodic:
            d = np.mod(d + grid.Lambda / 2, grid.Lambda) - grid.Lambda / 2
        r2 = r2 + d * d
    b = _bump(np.sqrt(r2) / w)
    inside = int(np.sum(b > 0))
    # resolution: at least 3 cells across the support along the vertical
    xn = grid.xn
    nv = int(np.sum((xn > y0[-1] - w) & (xn < y0[-1] + w)))
    if nv < 4 or inside < 4:
        raise ValueError(f"source bump of width {w} is unresolved ({nv} vertical nodes)")
    W = grid.weights(0.0)
    b = b / np.sum(W * b)
    moment = float(np.sum(W * b * X[-1]))
    return Field(grid, b), moment


def ball_measures(grid: Grid, pts, R: float, sigma: float = 1.0) -> np.ndarray:
    """``|B_R(x)|_sigma`` at the points (depends only on ``x_n``)."""
    pts = np.atleast_2d(pts)
    if grid.n == 1:
        return ball_measure_1d(pts[:, -1], R, sigma)
    hs, inv = np.unique(pts[:, -1], return_inverse=True)
    vals = np.array([ball_measure(Ball((0.0,) * (grid.n - 1) + (float(h),), R), sigma) for h in hs])
    return vals[inv]


def evolve(g: Field, t_out, n_steps: int = 400, op: OperatorMatrix | None = None,
           startup: int = 4):
    """Homogeneous flow sampled at ``t_out``: uniform midpoint steps of
    ``max(t_out) / n_steps`` after ``startup`` implicit-Euler half steps
    (damps the stiff modes of non-smooth data)."""
    grid = g.grid
    op = op if op is not None else OperatorMatrix(grid, "natural")
    t_out = np.sort(np.atleast_1d(np.asarray(t_out, float)))
    T = float(t_out[-1])
    tau = T / n_steps
    if t_out[0] < 3 * tau:
        raise ValueError(f"probe time {t_out[0]:.3g} is shorter than three steps ({tau:.3g} each)")
    M = op.mass
    u = np.asarray(g.values, float).ravel()
    half = spla.splu((sp.diags(M) + 0.5 * tau * op.A).tocsc())
    cn_r = sp.diags(M) - 0.5 * tau * op.A
    steps = [0.5 * tau] * startup + [tau] * (n_steps - startup // 2)
    t = 0.0
    snaps = []
    times = []
    for k, h in enumerate(steps):
        if k < startup:
            u = half.solve(M * u)
        else:
            u = half.solve(cn_r @ u)
        t += h
        times.append(t)
        snaps.append(u.reshape(grid.shape).copy())
    times = np.array(times)
    out = []
    for to in t_out:
        k = int(np.argmin(np.abs(times - to)))
        if abs(times[k] - to) > 1e-9 * T:
            raise ValueError(f"probe time {to} is not on the step grid")
        out.append(snaps[k])
    return t_out, out, (times, np.stack(snaps)), op


def _normalize(grid, y0, u_vals, t, moment):
    pts = grid.points()
    R = t ** 0.25
    r = rho(pts, np.asarray(y0, float))
    Bx = ball_measures(grid, pts, R)
    By = ball_measures(grid, np.atleast_2d(y0), R)[0]
    return r, np.abs(u_vals.ravel()) * np.sqrt(Bx * By) / moment


def probe_kernel(grid: Grid, y0, w: float, t, n_steps: int = 400, op=None):
    """Probe(s) of ``G(t, ., 0, y0)``; ``t`` may be a list of times."""
    g, moment = source_bump(grid, y0, w)
    ts, snaps, _, op = evolve(g, t, n_steps, op)
    probes = []
    for tt, u in zip(ts, snaps):
        r, nrm = _normalize(grid, y0, u, tt, moment)
        probes.append(KernelProbe(grid, np.asarray(y0, float), w, float(tt), Field(grid, u, float(tt)),
                                  moment, r, nrm))
    return probes if np.ndim(t) else probes[0]


def noise_floor(p: KernelProbe, factor: float = 1e3, solver_tol: float = EPS) -> float:
    return factor * solver_tol * float(np.max(p.normalized))


def shell_maxima(p: KernelProbe, n_bins: int = 40, xn_max: float | None = None,
                 s_min: float = 1e-3):
    """Maxima of the normalized kernel over log-spaced shells of ``s = rho^4/t``
    covering ``[s_min, max s]``."""
    xn = p.grid.points()[:, -1]
    xn_max = p.grid.Xmax / 2 if xn_max is None else xn_max
    keep = xn <= xn_max
    s = p.rho[keep] ** 4 / p.t
    v = p.normalized[keep]
    pos = s > 0
    edges = np.geomspace(max(s[pos].min(), s_min), s.max(), n_bins + 1)
    idx = np.digitize(s, edges)
    S, V = [], []
    for k in range(1, n_bins + 1):
        m = idx == k
        if np.any(m):
            j = np.argmax(v[m])
            S.append(s[m][j])
            V.append(v[m][j])
    return np.array(S), np.array(V)


def fit_envelope(p, s_min: float = 1.0, floor: float | None = None, n_bins: int = 40) -> EnvelopeFit:
    """Least squares of ``log N = a - b s^q`` over shell maxima with ``s >= s_min``
    and values above the noise floor (``q`` free).  ``p`` may be a list of
    probes; their shell maxima are pooled."""
    from scipy.optimize import minimize_scalar
    probes = p if isinstance(p, (list, tuple)) else [p]
    S, V = [], []
    for pr in probes:
        s, v = shell_maxima(pr, n_bins, s_min=s_min)
        fl = noise_floor(pr) if floor is None else floor * np.max(pr.normalized)
        keep = (s >= s_min) & (v > fl)
        S.append(s[keep])
        V.append(v[keep])
    s = np.concatenate(S)
    y = np.log(np.concatenate(V))
    if len(s) < 20:
        raise ValueError(f"only {len(s)} samples above the noise floor (need 20)")

    def lsq(q):
        A = np.column_stack([np.ones_like(s), -s ** q])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return coef, float(np.sum((A @ coef - y) ** 2))

    qs = np.linspace(0.05, 1.5, 59)
    errs = [lsq(q)[1] for q in qs]
    q0 = qs[int(np.argmin(errs))]
    res = minimize_scalar(lambda q: lsq(q)[1], bounds=(max(0.02, q0 - 0.05), q0 + 0.05), method="bounded")
    q = float(res.x)
    (a, b), sse = lsq(q)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - sse / sst if sst > 0 else 0.0
    if not np.isfinite(b):
        raise ValueError("degenerate envelope regression")
    return EnvelopeFit(float(a), float(b), q, float(r2), int(len(s)))


@dataclass
class DecayCheck:
    peak: float
    tail: float
    tail_slope: float

    @property
    def passed(self) -> bool:
        return self.tail < self.peak and self.tail_slope < 0


def superpolynomial_check(p: KernelProbe, N: int = 10, n_bins: int = 40, tail_fraction: float = 0.25,
                          s_min: float = 1e-2) -> DecayCheck:
    """Shell maxima of ``normalized (1 + rho / t^1/4)^N`` above the noise floor.

    ``tail`` is the maximum over the outer ``tail_fraction`` of the shells and
    ``tail_slope`` the least-squares slope of its logarithm against ``log s``
    there; polynomial decay of order ``N`` would leave the weighted profile
    flat or growing, so super-polynomial decay shows as ``tail < peak`` with a
    negative slope."""
    s, v = shell_maxima(p, n_bins, s_min=s_min)
    keep = v > noise_floor(p)
    s, v = s[keep], v[keep]
    w = v * (1 + s ** 0.25) ** N
    k = max(3, int(round(len(w) * tail_fraction)))
    if len(w) < 2 * k:
        raise ValueError("too few shells above the noise floor")
    slope = float(np.polyfit(np.log(s[-k:]), np.log(w[-k:]), 1)[0])
    return DecayCheck(float(np.max(w)), float(np.max(w[-k:])), slope)


def collapse_correlation(probes, s_min: float = 1.0, n_bins: int = 40) -> float:
    """Pearson correlation of ``log N`` with ``(rho^4/t)^{1/3}`` over pooled shell maxima."""
    S, V = [], []
    for pr in probes:
        s, v = shell_maxima(pr, n_bins, s_min=s_min)
        keep = (s >= s_min) & (v > noise_floor(pr))
        S.append(s[keep] ** (1 / 3))
        V.append(np.log(v[keep]))
    return float(np.corrcoef(np.concatenate(S), np.concatenate(V))[0, 1])


def exterior_decay_check(grid: Grid, y0, x0, w: float, rate: float, j: int = 0, alpha=None,
                         n_steps: int = 400, op=None, source_scale: float = 1.0) -> float:
    """``max x_n^j |d^alpha u| / ((1 + sqrt y0_n)^{2j-|alpha|} |B_1(y0)|^-1 e^{-rate rho/4})``
    over ``(t, x) in (1/2, 1] x B_1(x0)`` for the probe from ``y0`` at time 0.

    ``rate`` replaces ``1/c_n`` (take the fitted ``b``).
    """
    alpha = (0,) * grid.n if alpha is None else tuple(alpha)
    if 2 * j > sum(alpha):
        raise ValueError("need |alpha| >= 2j")
    g, _ = source_bump(grid, y0, w)
    g = g * source_scale
    ts = np.linspace(0.5, 1.0, 6)[1:]
    _, snaps, _, _ = evolve(g, ts, n_steps, op)
    pts = grid.points()
    inB = rho(pts, np.asarray(x0, float)) < 1
    xn = pts[:, -1]
    yn = float(np.atleast_1d(y0)[-1])
    B1 = ball_measures(grid, np.atleast_2d(y0), 1.0, 0.0)[0]
    r = rho(pts, np.asarray(y0, float))
    env = (1 + np.sqrt(yn)) ** (2 * j - sum(alpha)) / B1 * np.exp(-rate * r / 4)
    best = 0.0
    for u in snaps:
        d = grid.diff(u, alpha).ravel() if sum(alpha) else u.ravel()
        val = xn ** j * np.abs(d)
        best = max(best, float(np.max(val[inB] / env[inB])))
    return best


def kernel_Lq_norm(grid: Grid, y0, w: float, j: int, alpha, q: float, t_max: float = 1.0,
                   t_min: float = 1e-7, per_decade: int = 30, op=None) -> float:
    """``(int_0^t_max int x_n^{jq} |d^alpha G(t, x, 0, y0)|^q dx dt)^{1/q}``.

    Finite for every source iff ``q < (n+2)/(n - j + |alpha|)`` uniformly as
    the source approaches the boundary; the divergence appears as growth
    ``y0_n^{(n+2 - q (n - j + |alpha|))/q}`` for small source heights.  Time
    integration uses a geometric implicit-Euler grid and the trapezoidal rule.
    """
    from .evolution import evolve_homogeneous, geometric_times
    alpha = tuple(alpha)
    a = sum(alpha)
    if not (2 * j <= a < j + 2):
        raise ValueError(f"inadmissible (j, alpha) = ({j}, {alpha}): need 2j <= |alpha| < j + 2")
    if q < 1:
        raise ValueError("need q >= 1")
    g, _ = source_bump(grid, y0, w)
    times = geometric_times(t_min, t_max, per_decade)
    traj, _ = evolve_homogeneous(g, times, op)
    W = grid.weights(j * q)
    vals = []
    for u in traj.values:
        d = grid.diff(u, alpha) if a else u
        vals.append(float(np.sum(W * np.abs(d) ** q)))
    return float(np.trapezoid(vals, times)) ** (1 / q)


def admissible_q(n: int, j: int, alpha) -> float:
    """Upper integrability exponent ``(n + 2) / (n - j + |alpha|)``."""
    return (n + 2) / (n - j + sum(alpha))


def lq_height_sweep(grid: Grid, j: int, alpha, q_values, heights=(0.2, 0.1, 0.05, 0.025),
                    rel_width: float = 0.5, **kw):
    """L^q norms of the kernel derivative for sources at decreasing heights.

    Returns ``{q: (norms, slope)}`` with ``slope`` the fitted exponent of
    ``norm ~ height^-slope`` over the sweep, next to its predicted value
    ``(n - j + |alpha|) - (n + 2) / q`` (positive means divergence as the
    source approaches the boundary)."""
    heights = np.asarray(heights, float)
    out = {}
    for q in q_values:
        norms = np.array([kernel_Lq_norm(grid, (0.0,) * (grid.n - 1) + (h,), rel_width * h, j, alpha, q, **kw)
                          for h in heights])
        slope = -float(np.polyfit(np.log(heights[-2:]), np.log(norms[-2:]), 1)[0])
        out[q] = (norms, slope)
    return out


def predicted_height_exponent(n: int, j: int, alpha, q: float) -> float:
    return (n - j + sum(alpha)) - (n + 2) / q


def symmetry_defect(grid: Grid, a, b, w: float, t: float, n_steps: int = 400, op=None) -> float:
    """Relative mismatch of ``G(t, a, 0, b) / b_n`` and ``G(t, b, 0, a) / a_n``
    (the kernel is symmetric against the measure ``x_n dx``).  Uses point
    values of two probes at the respective receivers."""
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    pts = grid.points()

    def at(u, x):
        return float(u.values.ravel()[int(np.argmin(np.sum((pts - x) ** 2, axis=1)))])

    pa = probe_kernel(grid, b, w, t, n_steps, op)
    pb = probe_kernel(grid, a, w, t, n_steps, op)
    g_ab = at(pa.u, a) / pa.moment
    g_ba = at(pb.u, b) / pb.moment
    return abs(g_ab - g_ba) / max(abs(g_ab), abs(g_ba))
