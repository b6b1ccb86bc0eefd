"""Tensor grids on the truncated half-space and scalar fields living on them.

The half-space ``H = {x_n > 0}`` is truncated to ``0 <= x_n <= Xmax`` with a
graded vertical node set ``x_n = Xmax (i/M)^gamma`` and a uniform (by default
periodic) node set of ``K`` points per tangential axis.  Field samples are
stored with the vertical axis last, i.e. with shape ``(K,) * (n - 1) + (M + 1,)``.

Spatial derivatives use Fornberg finite-difference weights on ``width``
consecutive nodes (default 5, which is exact on polynomials of degree 4 and of
formal order at least 2 for derivatives up to order 4).  Weighted quadrature
integrates ``x_n**sigma`` exactly against the piecewise-linear interpolant of
the samples in every vertical cell.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline


class GridSizingError(ValueError):
    """Raised when a stencil does not fit on the grid."""


def fd_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights of the m-th derivative at ``z`` from values at nodes ``x``.

    Fornberg's recursion; returns the weight vector for derivative order ``m``.
    """
    x = np.asarray(x, dtype=np.longdouble)
    z = np.longdouble(z)
    npts = len(x)
    c = np.zeros((npts, m + 1), dtype=np.longdouble)
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


class Stencil:
    """Finite-difference stencil of one derivative order along one axis.

    Rows are evaluated as ``sum_k w_k (u_k - u_i)``, so constants are
    annihilated exactly and rounding scales with the local variation of ``u``
    rather than with ``|u|`` (which matters on the fine cells near x_n = 0).
    """

    def __init__(self, idx: np.ndarray, w: np.ndarray):
        self.idx = idx
        self.w_ext = np.asarray(w, dtype=np.longdouble)
        self.w = self.w_ext.astype(float)

    @property
    def matrix(self) -> sp.csr_matrix:
        N, width = self.idx.shape
        rows = np.repeat(np.arange(N), width)
        return sp.csr_matrix((self.w.ravel(), (rows, self.idx.ravel())), shape=(N, N))

    def apply(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        v = np.moveaxis(np.asarray(values), axis, -1)
        out = np.zeros(v.shape, dtype=np.result_type(v, float))
        w = self.w_ext if out.dtype == np.longdouble else self.w
        for k in range(self.idx.shape[1]):
            out += w[:, k] * (v[..., self.idx[:, k]] - v)
        return np.moveaxis(out, -1, axis)


def stencil(nodes: np.ndarray, m: int, width: int = 5,
            period: float | None = None) -> Stencil:
    """Stencil of the m-th derivative on ``nodes``.

    Stencils are centred where possible and shifted to one-sided ones near the
    ends.  With ``period`` given the nodes are taken as uniform on a circle and
    the centred stencil wraps around.
    """
    nodes = np.asarray(nodes, dtype=float)
    N = len(nodes)
    if m < 1:
        raise ValueError("derivative order must be positive")
    if width < m + 1:
        raise GridSizingError(f"stencil width {width} too small for order {m}")
    if width > N:
        raise GridSizingError(f"stencil of width {width} needs at least {width} nodes, grid has {N}")
    half = width // 2
    idx = np.empty((N, width), dtype=int)
    W = np.empty((N, width), dtype=np.longdouble)
    if period is not None:
        h = period / N
        offs = np.arange(-half, width - half)
        w = fd_weights(0.0, offs.astype(float), m) / h ** m
        idx[:] = (np.arange(N)[:, None] + offs) % N
        W[:] = w
    else:
        for i in range(N):
            start = min(max(i - half, 0), N - width)
            idx[i] = np.arange(start, start + width)
            xs = nodes[idx[i]].astype(np.longdouble) - nodes[i]
            scale = np.max(np.abs(xs))
            W[i] = fd_weights(0.0, xs / scale, m) / scale ** m
    return Stencil(idx, W)


def diff_matrix(nodes, m, width=5, period=None) -> sp.csr_matrix:
    """Sparse-matrix form of :func:`stencil` (identity for ``m = 0``)."""
    if m == 0:
        return sp.identity(len(nodes), format="csr")
    return stencil(nodes, m, width, period).matrix


def _cell_moments(a: np.ndarray, b: np.ndarray, s: float):
    """Return (int_a^b x^s dx, int_a^b x^(s+1) dx) cellwise."""
    return ((b ** (s + 1) - a ** (s + 1)) / (s + 1),
            (b ** (s + 2) - a ** (s + 2)) / (s + 2))


def hat_weights(nodes: np.ndarray, sigma: float, lo: float | None = None,
                hi: float | None = None) -> np.ndarray:
    """Weights ``W_i`` with ``sum_i W_i f_i = int_lo^hi x^sigma (I f)(x) dx``.

    ``I f`` is the piecewise-linear interpolant on ``nodes`` (``nodes[0] >= 0``);
    the weight ``x^sigma`` is integrated exactly in every cell.
    """
    if sigma <= -1:
        raise ValueError(f"weight exponent sigma={sigma} is not locally integrable (need sigma > -1)")
    x = np.asarray(nodes, dtype=float)
    lo = x[0] if lo is None else max(lo, x[0])
    hi = x[-1] if hi is None else min(hi, x[-1])
    W = np.zeros_like(x)
    if hi <= lo:
        return W
    xl, xr = x[:-1], x[1:]
    c = np.clip(xl, lo, hi)
    d = np.clip(xr, lo, hi)
    keep = d > c
    h = xr - xl
    m0, m1 = _cell_moments(c[keep], d[keep], sigma)
    # phi_left = (xr - x)/h, phi_right = (x - xl)/h
    wl = (xr[keep] * m0 - m1) / h[keep]
    wr = (m1 - xl[keep] * m0) / h[keep]
    idx = np.nonzero(keep)[0]
    np.add.at(W, idx, wl)
    np.add.at(W, idx + 1, wr)
    return W


@dataclass(frozen=True)
class WeightSpec:
    """Power weight ``x_n**sigma`` defining the measure ``mu_sigma``."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > -1:
            raise ValueError(f"sigma={self.sigma} must exceed -1")


@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid on ``T^(n-1) x [0, Xmax]`` with graded vertical nodes.

    Args:
        n: spatial dimension (1..3).
        M: number of vertical cells; nodes ``0..M``.
        Xmax: vertical truncation height.
        gamma: grading exponent, node ``i`` sits at ``Xmax (i/M)**gamma``.
        K: nodes per tangential axis.
        Lambda: tangential period (or extent when ``periodic`` is false).
        periodic: periodic tangential directions (default).  Non-periodic
            tangential axes use ``K`` nodes spanning ``[0, Lambda]``.
        width: finite-difference stencil width.
    """

    n: int = 1
    M: int = 256
    Xmax: float = 8.0
    gamma: float = 2.0
    K: int = 1
    Lambda: float = 2 * np.pi
    periodic: bool = True
    width: int = 5
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError("dimension n must be 1, 2 or 3")
        if self.M < 8:
            raise ValueError("need at least M = 8 vertical cells")
        if self.gamma < 1:
            raise ValueError("grading exponent gamma must be >= 1")
        if self.Xmax <= 0 or self.Lambda <= 0:
            raise ValueError("extents must be positive")
        if self.n > 1 and self.K < self.width:
            raise GridSizingError(f"K={self.K} tangential nodes cannot hold a width-{self.width} stencil")

    @property
    def shape(self) -> tuple:
        return (self.K,) * (self.n - 1) + (self.M + 1,)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def xn(self) -> np.ndarray:
        i = np.arange(self.M + 1)
        x = self.Xmax * (i / self.M) ** self.gamma
        x[0] = 0.0
        return x

    @cached_property
    def xt(self) -> np.ndarray:
        if self.periodic:
            return np.arange(self.K) * (self.Lambda / self.K)
        return np.linspace(0.0, self.Lambda, self.K)

    @property
    def dxt(self) -> float:
        return self.Lambda / self.K if self.periodic else self.Lambda / (self.K - 1)

    def axis_nodes(self, axis: int) -> np.ndarray:
        return self.xn if axis == self.n - 1 else self.xt

    def coords(self) -> list[np.ndarray]:
        """Broadcast coordinate arrays ``[x_1, ..., x_n]`` of full grid shape."""
        axes = [self.xt] * (self.n - 1) + [self.xn]
        return list(np.meshgrid(*axes, indexing="ij"))

    def points(self) -> np.ndarray:
        """All nodes as an array of shape ``(size, n)``."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    def stencil(self, axis: int, m: int) -> Stencil:
        key = ("d", axis, m)
        if key not in self._cache:
            if axis == self.n - 1:
                S = stencil(self.xn, m, self.width)
            else:
                S = stencil(self.xt, m, self.width,
                            period=self.Lambda if self.periodic else None)
            self._cache[key] = S
        return self._cache[key]

    def dmat(self, axis: int, m: int) -> sp.csr_matrix:
        return self.stencil(axis, m).matrix

    def diff(self, values: np.ndarray, alpha) -> np.ndarray:
        """Apply ``d^alpha`` to a sample array of grid shape."""
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.n:
            raise ValueError(f"multi-index {alpha} does not match n={self.n}")
        if sum(alpha) > 4:
            raise ValueError("derivatives are provided up to total order 4")
        out = np.asarray(values)
        for axis, m in enumerate(alpha):
            if m:
                out = self.stencil(axis, m).apply(out, axis)
        return out

    def vweights(self, sigma: float, lo=None, hi=None) -> np.ndarray:
        key = ("w", float(sigma), lo, hi)
        if key not in self._cache:
            self._cache[key] = hat_weights(self.xn, sigma, lo, hi)
        return self._cache[key]

    def tweights(self) -> np.ndarray:
        if self.periodic:
            return np.full(self.K, self.dxt)
        w = np.full(self.K, self.dxt)
        w[0] = w[-1] = self.dxt / 2
        return w

    def weights(self, sigma: float, lo=None, hi=None) -> np.ndarray:
        """Full quadrature weights for ``int f x_n^sigma dx`` of grid shape."""
        W = self.vweights(sigma, lo, hi)
        if self.n == 1:
            return W
        tw = self.tweights()
        out = W
        for _ in range(self.n - 1):
            out = np.multiply.outer(tw, out)
        return out

    def refine(self, factor: int = 2) -> "Grid":
        K = self.K if self.n == 1 else self.K * factor
        return Grid(self.n, self.M * factor, self.Xmax, self.gamma, K,
                    self.Lambda, self.periodic, self.width)

    def params(self) -> dict:
        return dict(n=self.n, M=self.M, Xmax=self.Xmax, gamma=self.gamma, K=self.K,
                    Lambda=self.Lambda, periodic=self.periodic, width=self.width)


def apply_along(D: sp.spmatrix, values: np.ndarray, axis: int) -> np.ndarray:
    """Apply a sparse matrix to ``values`` along ``axis``."""
    v = np.moveaxis(np.asarray(values), axis, 0)
    shp = v.shape
    out = D @ v.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape((D.shape[0],) + shp[1:]), 0, axis)


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a scalar function on a grid, optionally tagged with a time."""

    grid: Grid
    values: np.ndarray
    t: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.result_type(self.values, float))
        if v.shape != self.grid.shape:
            raise ValueError(f"samples of shape {v.shape} do not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fn, t=None) -> "Field":
        """Sample ``fn(x_1, ..., x_n)`` (broadcasting) on the grid."""
        vals = np.broadcast_to(fn(*grid.coords()), grid.shape)
        return cls(grid, vals, t)

    def with_values(self, values, t="keep") -> "Field":
        return Field(self.grid, values, self.t if t == "keep" else t)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, c):
        return self.with_values(self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


def derivative(f: Field, l: int = 0, alpha=None) -> Field:
    """Spatial derivative ``d^alpha f`` on the grid (``l`` must be 0 here)."""
    if l != 0:
        raise ValueError("time derivatives of a single snapshot are undefined; use a trajectory")
    if alpha is None:
        alpha = (0,) * f.grid.n
    return f.with_values(f.grid.diff(f.values, alpha))


def integrate(f: Field | np.ndarray, w: WeightSpec | float = 0.0, region=None,
              grid: Grid | None = None, xn_range=None) -> float:
    """Quadrature of ``int f x_n^sigma dx`` over the truncated grid.

    ``xn_range=(lo, hi)`` restricts the vertical integration exactly to a
    strip.  ``region`` may be a boolean node mask or an object with a
    ``contains(points)`` method (a ball); nodes outside it are dropped, which
    is first-order accurate at the region boundary.
    """
    sigma = w.sigma if isinstance(w, WeightSpec) else float(w)
    if sigma <= -1:
        raise ValueError(f"weight exponent sigma={sigma} is not locally integrable (need sigma > -1)")
    if isinstance(f, Field):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f)
    lo, hi = (None, None) if xn_range is None else xn_range
    W = grid.weights(sigma, lo, hi)
    if region is not None:
        if hasattr(region, "contains"):
            mask = region.contains(grid.points()).reshape(grid.shape)
        else:
            mask = np.asarray(region, dtype=bool)
        W = W * mask
    return float(np.sum(W * vals))


def rescale(f: Field, lam: float, w: float, return_mask: bool = False):
    """Return ``lam**w f(lam^2 t, lam x)`` resampled on the same grid.

    Vertical resampling uses a not-a-knot cubic spline, tangential resampling
    a periodic one, so cubic polynomials (and, tangentially, smooth periodic
    data) are reproduced up to O(spacing^4).  Points with ``lam x_n > Xmax``
    are clamped to the top; a warning reports how many there were.  The time
    label of the result is ``t / lam**2``.
    """
    if lam <= 0:
        raise ValueError("scaling factor must be positive")
    g = f.grid
    vals = np.asarray(f.values, dtype=float)
    target = lam * g.xn
    clamped = target > g.Xmax * (1 + 1e-14)
    vals = CubicSpline(g.xn, vals, axis=-1)(np.minimum(target, g.Xmax))
    for axis in range(g.n - 1):
        if g.periodic:
            xs = np.append(g.xt, g.Lambda)
            ext = np.concatenate([vals, np.take(vals, [0], axis=axis)], axis=axis)
            spl = CubicSpline(xs, ext, axis=axis, bc_type="periodic")
            vals = spl(np.mod(lam * g.xt, g.Lambda))
        else:
            xt = np.clip(lam * g.xt, 0, g.Lambda)
            vals = CubicSpline(g.xt, vals, axis=axis)(xt)
    if np.any(clamped):
        warnings.warn(f"rescale: {int(clamped.sum())} vertical nodes clamped to Xmax", stacklevel=2)
    t = None if f.t is None else f.t / lam ** 2
    out = Field(g, lam ** w * vals, t)
    if return_mask:
        mask = np.broadcast_to(~clamped, g.shape)
        return out, mask
    return out


def resample(f: Field, grid: Grid, lam: float = 1.0, w: float = 0.0) -> Field:
    """Return ``lam**w f(lam x)`` sampled on the nodes of another grid.

    Every target point ``lam x`` must lie inside the source box (tangentially
    it is wrapped when periodic).  Cubic splines as in ``rescale``.
    """
    src = f.grid
    if grid.n != src.n:
        raise ValueError("dimension mismatch")
    target = lam * grid.xn
    if target.max() > src.Xmax * (1 + 1e-12):
        raise ValueError("target points leave the source box")
    vals = CubicSpline(src.xn, np.asarray(f.values, dtype=float), axis=-1)(np.minimum(target, src.Xmax))
    for axis in range(src.n - 1):
        if src.periodic:
            xs = np.append(src.xt, src.Lambda)
            ext = np.concatenate([vals, np.take(vals, [0], axis=axis)], axis=axis)
            vals = CubicSpline(xs, ext, axis=axis, bc_type="periodic")(np.mod(lam * grid.xt, src.Lambda))
        else:
            vals = CubicSpline(src.xt, vals, axis=axis)(np.clip(lam * grid.xt, 0, src.Lambda))
    t = None if f.t is None else f.t / lam ** 2
    return Field(grid, lam ** w * vals, t)


def save_field(path, f: Field) -> Path:
    """Write a field as CSV ``x1,...,xn,value`` plus a JSON sidecar."""
    path = Path(path)
    pts = f.grid.points()
    data = np.column_stack([pts, f.values.ravel()])
    header = ",".join([f"x{i + 1}" for i in range(f.grid.n)] + ["value"])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    meta = {"grid": f.grid.params(), "t": f.t}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    return path


def load_field(path) -> Field:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(**meta["grid"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Field(grid, data[:, -1].reshape(grid.shape), meta["t"])
