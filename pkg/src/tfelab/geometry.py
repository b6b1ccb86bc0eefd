"""Intrinsic geometry of the half-space.

The Riemannian metric ``x_n^{-1} |dx|^2`` induces a distance ``d`` that is
equivalent to the explicit quasimetric

    rho(x, y) = |x - y| / (sqrt(x_n) + sqrt(y_n) + sqrt|x - y|),

which is used as the working distance throughout.  Balls are
``B_R(x) = {y : rho(x, y) < R}``; they are measured with ``mu_sigma =
x_n^sigma dx``.

For a fixed height ``y_n`` the ball is a Euclidean ball in the tangential
variables: with ``D = |x - y|`` and ``c = sqrt(x_n) + sqrt(y_n)`` the
condition ``D / (c + sqrt D) < R`` is equivalent to ``sqrt D < s(y_n)`` where
``s = (R + sqrt(R^2 + 4 R c)) / 2``.  Ball measures therefore reduce to a
one-dimensional integral over ``y_n``, evaluated with adaptive quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import gamma as _gamma

import numpy as np
from scipy import integrate as _integ
from scipy.optimize import brentq


def rho(x, y) -> np.ndarray:
    """Quasimetric ``rho(x, y)``; points are arrays with last axis of length n."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x[..., -1] < 0) or np.any(y[..., -1] < 0):
        raise ValueError("points must lie in the closed half-space x_n >= 0")
    D = np.sqrt(np.sum((x - y) ** 2, axis=-1))
    den = np.sqrt(x[..., -1]) + np.sqrt(y[..., -1]) + np.sqrt(D)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(D > 0, D / np.where(den > 0, den, 1.0), 0.0)
    return r


def parabolic_distance(t, x, s, y) -> np.ndarray:
    """Fourth root of ``|t - s| + rho(x, y)^4``."""
    return (np.abs(np.asarray(t, float) - s) + rho(x, y) ** 4) ** 0.25


def delta_factor(l: int, alpha, R, x, heights: bool = False) -> np.ndarray:
    """Derivative factor ``R^{-4l-|alpha|} (R + sqrt x_n)^{-|alpha|}``.

    ``alpha`` may be a multi-index or its order.  ``x`` is a point (array with
    the coordinates on the last axis) or a height; with ``heights`` every entry
    of ``x`` is taken as a height.
    """
    a = alpha if np.isscalar(alpha) else sum(alpha)
    xn = np.asarray(x, dtype=float)
    if not heights and xn.ndim >= 1 and xn.shape[-1] > 1:
        xn = xn[..., -1]
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise ValueError("radius must be positive")
    return R ** (-4 * l - a) * (R + np.sqrt(xn)) ** (-a)


def ball_comparator(R, xn, n: int, sigma: float):
    """Two-sided comparator ``R^n (R + sqrt x_n)^{n + 2 sigma}`` of ball measures."""
    return R ** n * (R + np.sqrt(xn)) ** (n + 2 * sigma)


@dataclass(frozen=True)
class CZIndex:
    """Admissible exponent triple ``(j, l, alpha)`` with ``j = 2l + |alpha| - 2``."""

    j: float
    l: int
    alpha: tuple

    def __post_init__(self):
        if self.j != 2 * self.l + sum(self.alpha) - 2 or 2 * self.j > sum(self.alpha) or self.j < 0:
            raise ValueError(f"({self.j}, {self.l}, {self.alpha}) is not admissible")

    @property
    def order(self) -> int:
        return sum(self.alpha)


def cz_indices(n: int) -> list[CZIndex]:
    """All admissible ``(j, l, alpha)``: ``j = 2l + |alpha| - 2 >= 0``, ``2j <= |alpha|``."""
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    out = []
    # 2j <= |alpha| forces 4l + |alpha| <= 4
    for l in range(2):
        for order in range(5 - 4 * l):
            j = 2 * l + order - 2
            if j < 0 or 2 * j > order:
                continue
            for alpha in product(range(order + 1), repeat=n):
                if sum(alpha) == order:
                    out.append(CZIndex(j, l, tuple(alpha)))
    return out


@dataclass(frozen=True)
class Ball:
    """Intrinsic ball ``{y : rho(x, y) < R}``."""

    center: tuple
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("ball radius must be positive")
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        if c[-1] < 0:
            raise ValueError("ball center must satisfy x_n >= 0")
        object.__setattr__(self, "center", c)

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def xn(self) -> float:
        return self.center[-1]

    def contains(self, pts) -> np.ndarray:
        return rho(np.asarray(pts, float), np.array(self.center)) < self.R

    def sqrt_radius(self, yn):
        """Upper bound ``s(y_n)`` of ``sqrt|x - y|`` inside the ball at height ``y_n``."""
        c = np.sqrt(self.xn) + np.sqrt(yn)
        return 0.5 * (self.R + np.sqrt(self.R ** 2 + 4 * self.R * c))

    def tangential_radius(self, yn):
        """Radius of the tangential section at height ``y_n`` (``nan`` if empty)."""
        s = self.sqrt_radius(yn)
        r2 = s ** 4 - (np.asarray(yn) - self.xn) ** 2
        return np.where(r2 > 0, np.sqrt(np.maximum(r2, 0)), np.nan)

    def vertical_extent(self) -> tuple[float, float]:
        """Exact range ``(lo, hi)`` of heights met by the ball."""
        x = self.xn

        def g(y):
            return self.sqrt_radius(y) ** 2 - abs(y - x)

        lo = 0.0 if g(0.0) >= 0 else brentq(g, 0.0, x, xtol=1e-15, rtol=1e-15)
        top = max(2 * x, 1.0)
        while g(top) > 0:
            top *= 2
        hi = brentq(g, x, top, xtol=1e-15, rtol=1e-15)
        return lo, hi

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.vertical_extent()
        rmax = self.sqrt_radius(hi) ** 2
        c = np.array(self.center)
        a = np.concatenate([c[:-1] - rmax, [lo]])
        b = np.concatenate([c[:-1] + rmax, [hi]])
        return a, b


def _unit_ball_volume(k: int) -> float:
    return np.pi ** (k / 2) / _gamma(k / 2 + 1)


def ball_measure(B: Ball, sigma: float = 0.0, method: str = "quad",
                 n_samples: int = 200_000, seed: int = 0) -> float:
    """Weighted measure ``mu_sigma(B)``.

    ``method="quad"`` integrates the exact tangential section volume over the
    vertical extent; ``method="mc"`` uses Monte Carlo in the bounding box with
    the vertical coordinate drawn from the density ``~ y_n^sigma`` (a fixed
    ``seed`` makes it deterministic).
    """
    lo, hi = B.vertical_extent()
    if not sigma > -1 and lo == 0.0:
        raise ValueError("sigma must exceed -1 for balls touching the boundary")
    k = B.n - 1
    if method == "quad":
        vk = _unit_ball_volume(k)

        def section(y):
            r = B.tangential_radius(y)
            return vk * np.nan_to_num(r) ** k

        if k == 0:
            if sigma == -1:
                return float(np.log(hi / lo))
            return (hi ** (sigma + 1) - lo ** (sigma + 1)) / (sigma + 1)
        pts = [B.xn] if lo < B.xn < hi else None
        if lo == 0.0 and sigma != 0:
            val, _ = _integ.quad(section, lo, hi, weight="alg", wvar=(sigma, 0.0), limit=200)
        else:
            val, _ = _integ.quad(lambda y: y ** sigma * section(y), lo, hi, points=pts,
                                 limit=200, epsabs=0, epsrel=1e-11)
        return float(val)
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    a, b = B.bounding_box()
    # vertical coordinate drawn with density proportional to y^sigma on [lo, hi]
    u = rng.random(n_samples)
    p = sigma + 1
    if p == 0:
        yn = lo * (hi / lo) ** u
        mass_v = np.log(hi / lo)
    else:
        yn = (lo ** p + u * (hi ** p - lo ** p)) ** (1 / p)
        mass_v = (hi ** p - lo ** p) / p
    tang = a[:-1] + (b[:-1] - a[:-1]) * rng.random((n_samples, k))
    pts = np.column_stack([tang, yn])
    frac = np.mean(B.contains(pts))
    return float(frac * mass_v * np.prod(b[:-1] - a[:-1]))


def ball_measure_1d(x, R, sigma: float = 0.0) -> np.ndarray:
    """Vectorised exact ``mu_sigma`` of one-dimensional balls ``B_R(x)``."""
    x = np.asarray(x, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), x.shape)

    def g(y):
        c = np.sqrt(x) + np.sqrt(y)
        s = 0.5 * (R + np.sqrt(R ** 2 + 4 * R * c))
        return s * s - np.abs(y - x)

    # upper endpoint: bisection on [x, top]
    a = x.copy()
    b = np.maximum(2 * x, 1.0)
    while np.any(g(b) > 0):
        b = np.where(g(b) > 0, 2 * b, b)
    for _ in range(100):
        m = 0.5 * (a + b)
        pos = g(m) > 0
        a, b = np.where(pos, m, a), np.where(pos, b, m)
    hi = 0.5 * (a + b)
    a = np.zeros_like(x)
    b = x.copy()
    touch = g(a) >= 0
    for _ in range(100):
        m = 0.5 * (a + b)
        pos = g(m) > 0
        a, b = np.where(pos, a, m), np.where(pos, m, b)
    lo = np.where(touch, 0.0, 0.5 * (a + b))
    p = sigma + 1
    return (hi ** p - lo ** p) / p


def quasi_triangle_constant(n: int, n_triples: int = 10_000, seed: int = 0,
                            scale: float = 4.0) -> float:
    """Largest observed ``rho(x,z) / (rho(x,y) + rho(y,z))`` over random triples."""
    rng = np.random.default_rng(seed)
    # heights spread over several decades so that boundary and bulk both appear
    pts = rng.random((3, n_triples, n)) * scale
    pts[..., -1] = scale * 10.0 ** rng.uniform(-4, 0, size=(3, n_triples))
    x, y, z = pts
    num = rho(x, z)
    den = rho(x, y) + rho(y, z)
    ok = den > 0
    return float(np.max(num[ok] / den[ok]))


def euclidean_sandwich(B: Ball, n_dirs: int = 2000, seed: int = 0) -> tuple[float, float]:
    """Radii of the largest inscribed and smallest circumscribed Euclidean balls.

    Both are returned in units of ``R (R + sqrt x_n)``.  Directions are sampled
    randomly (plus the vertical ones); along each ray the boundary is found by
    root finding on ``rho``.
    """
    n = B.n
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    e = np.zeros(n)
    e[-1] = 1.0
    dirs = np.vstack([dirs, e, -e])
    c = np.array(B.center)
    unit = B.R * (B.R + np.sqrt(B.xn))
    free, cut = [], []
    for d in dirs:
        # distance to the half-space boundary along d (if heading down)
        tmax = c[-1] / -d[-1] if d[-1] < 0 else np.inf

        def f(t):
            p = c + t * d
            p[-1] = max(p[-1], 0.0)
            return rho(p, c) - B.R

        hi = min(tmax, 1.0)
        while f(hi) < 0 and hi < tmax:
            hi = min(2 * hi, tmax)
        if f(hi) < 0:
            # the ray leaves the half-space inside the ball
            cut.append(hi)
        else:
            free.append(brentq(f, 0.0, hi, xtol=1e-14))
    # rays cut off by the boundary do not limit the inscribed ball (intersected with H)
    inner = min(free) / unit
    outer = max(free + cut) / unit
    return inner, outer


def muckenhoupt_estimate(a: float, p: float, balls, mu: float = 1.0) -> float:
    """Finite-sample lower bound for the A_p constant of ``omega = x_n^a``.

    For each ball the product ``avg(omega) * avg(omega^{-1/(p-1)})^{p-1}`` is
    computed with averages against ``mu_1`` (``mu`` selects another base
    measure).  Non-integrable averages return ``inf``.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    best = 0.0
    for B in balls:
        base = ball_measure(B, mu)
        lo, _ = B.vertical_extent()
        vals = []
        for e in (a, -a / (p - 1)):
            if lo == 0.0 and mu + e <= -1:
                vals.append(np.inf)
            else:
                vals.append(ball_measure(B, mu + e) / base)
        prod_ = vals[0] * vals[1] ** (p - 1)
        best = max(best, prod_)
    return float(best)


def weight_exponent(sigma: float, p: float) -> float:
    """Exponent of the weight ``x_n^{sigma p - 1}`` (relative to ``mu_1``)
    induced by the weighted norm ``||x_n^sigma f||_{L^p(dx)}``."""
    return sigma * p - 1


def vitali_cover(B: Ball, r: float, n_samples: int = 4000, seed: int = 0) -> list[Ball]:
    """Cover ``B`` by radius-``r`` balls whose centers are ``r/3``-separated in a
    greedy maximal fashion (so the shrunken balls ``B_{r/3}`` are disjoint up
    to the quasi-triangle constant, which is checked empirically)."""
    if not 0 < r <= B.R:
        raise ValueError("need 0 < r <= R")
    if r == B.R:
        return [B]
    pts = sample_ball(B, n_samples, seed)
    # include the center first so that the cover is anchored
    pts = np.vstack([np.array(B.center)[None], pts])
    centers = []
    uncovered = np.ones(len(pts), dtype=bool)
    while np.any(uncovered):
        i = int(np.argmax(uncovered))
        c = pts[i]
        centers.append(c)
        uncovered &= rho(pts, c) >= r
    return [Ball(tuple(c), r) for c in centers]


def sample_ball(B: Ball, n_samples: int, seed: int = 0) -> np.ndarray:
    """Uniform (Lebesgue) random points of ``B`` by rejection from its box."""
    rng = np.random.default_rng(seed)
    a, b = B.bounding_box()
    out = []
    need = n_samples
    while need > 0:
        pts = a + (b - a) * rng.random((max(4 * need, 64), B.n))
        pts = pts[B.contains(pts)]
        out.append(pts[:need])
        need -= len(out[-1])
    return np.vstack(out)
