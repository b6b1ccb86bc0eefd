"""The degenerate fourth-order operator and its second-order factor.

Strong form::

    L u = x_n^{-1} Lap(x_n^3 Lap u) - 4 Lap' u
        = x_n^2 Lap^2 u + 6 x_n Lap d_n u + 2 Lap' u + 6 d_n^2 u,

    L_sigma u = -x_n^{-sigma} div(x_n^{sigma+1} grad u) = -x_n Lap u - (sigma+1) d_n u,

and ``L = L_1 L_1``.  Strong-form application uses the grid stencils and is a
cross-check; the canonical discretization is the weak (finite-volume) form

    (L_1 u, w)_{mu_1} = int x_n^2 grad u . grad w dx,
    (L u, w)_{mu_1}   = (L_1 u, L_1 w)_{mu_1},

assembled as ``Kt`` (the stiffness of ``x_n^2 |grad u|^2``) and the lumped
``mu_1`` mass ``M``, so that ``L_h = M^{-1} Kt M^{-1} Kt``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, Grid, integrate

EPS = np.finfo(float).eps


def _unit(n, axis, m=1):
    a = [0] * n
    a[axis] = m
    return tuple(a)


def laplacian(grid: Grid, values, tangential_only=False):
    n = grid.n
    axes = range(n - 1) if tangential_only else range(n)
    out = np.zeros(grid.shape, dtype=np.result_type(values, float))
    for a in axes:
        out = out + grid.diff(values, _unit(n, a, 2))
    return out


def _check(values, what):
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{what}: non-finite values (stencil or grading failure)")
    return values


def apply_L(u: Field, form: str = "divergence") -> Field:
    """Strong-form ``L u``.

    Both forms start from the same discrete ``g = Lap u``.  The divergence
    form differentiates the flux ``x_n^3 g`` and divides by ``x_n``; at
    ``x_n = 0`` the limit ``6 g`` is used (``Lap(x_n^3 g)`` vanishes there to
    first order with slope ``6 g``).  The expanded form applies the product
    rule before differentiating.  Stencils are evaluated in extended
    precision: fourth derivatives on the fine cells amplify rounding by
    ``h^-4`` and the two forms would otherwise disagree at that level.
    """
    grid = u.grid
    n = grid.n
    xn = grid.coords()[-1].astype(np.longdouble)
    v = np.asarray(u.values, dtype=np.longdouble)
    g = laplacian(grid, v)
    lap_t = laplacian(grid, v, tangential_only=True)
    if form == "divergence":
        flux = laplacian(grid, xn ** 3 * g)
        out = np.empty(grid.shape, dtype=np.longdouble)
        inner = xn > 0
        out[inner] = flux[inner] / xn[inner]
        out[~inner] = 6 * g[~inner]
        out = out - 4 * lap_t
    elif form == "expanded":
        lap2 = laplacian(grid, g)
        dn_lap = grid.diff(g, _unit(n, n - 1))
        dnn = grid.diff(v, _unit(n, n - 1, 2))
        out = xn ** 2 * lap2 + 6 * xn * dn_lap + 2 * lap_t + 6 * dnn
    else:
        raise ValueError(f"unknown form {form!r}")
    return u.with_values(_check(out.astype(float), "apply_L"))


def apply_Lsigma(u: Field, sigma: float = 1.0) -> Field:
    """Strong-form ``L_sigma u = -x_n Lap u - (sigma + 1) d_n u``."""
    if not sigma > -1:
        raise ValueError("sigma must exceed -1")
    grid = u.grid
    xn = grid.coords()[-1].astype(np.longdouble)
    v = np.asarray(u.values, dtype=np.longdouble)
    out = -xn * laplacian(grid, v) - (sigma + 1) * grid.diff(v, _unit(grid.n, grid.n - 1))
    return u.with_values(_check(out.astype(float), "apply_Lsigma"))


def rounding_bound(u: Field) -> np.ndarray:
    """Pointwise floating-point error bound of the strong ``apply_L``.

    The samples carry a relative rounding error of their own precision and
    the stencils add one of extended precision; both are propagated through
    the absolute values of the stencils: a perturbation ``e`` of ``g = Lap u``
    is amplified by ``|x_n^2 Lap| + |6 x_n d_n| + 6``.
    """
    grid = u.grid
    n = grid.n
    xn = grid.coords()[-1]
    eps = float(np.finfo(np.asarray(u.values).dtype).eps) + float(np.finfo(np.longdouble).eps)
    v = np.abs(np.asarray(u.values, dtype=float))

    def absdiff(vals, alpha):
        out = vals
        for axis, m in enumerate(alpha):
            if m:
                S = grid.stencil(axis, m)
                mv = np.moveaxis(out, axis, -1)
                acc = np.zeros(mv.shape)
                for k in range(S.idx.shape[1]):
                    acc += np.abs(S.w[:, k]) * (mv[..., S.idx[:, k]] + mv)
                out = np.moveaxis(acc, -1, axis)
        return out

    def abslap(vals):
        return sum(absdiff(vals, _unit(n, a, 2)) for a in range(n))

    g_err = eps * abslap(v)
    g_abs = np.abs(laplacian(grid, u.values))
    amp = xn ** 2 * abslap(g_err + eps * g_abs) + 6 * xn * absdiff(g_err + eps * g_abs, _unit(n, n - 1)) \
        + 6 * g_err + 4 * eps * abslap(v)
    # final rounding to double
    return 8 * amp + EPS * np.abs(apply_L(u).values)


@dataclass(frozen=True)
class SobolevNormSpec:
    """Weighted Sobolev norm ``W^{k,p}(mu_{sigma_0}, ..., mu_{sigma_k})``."""

    k: int
    p: float
    sigmas: tuple

    def __post_init__(self):
        if len(self.sigmas) != self.k + 1:
            raise ValueError("need one weight exponent per derivative order")
        if not self.sigmas[0] > -1 or any(b < a for a, b in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("weight ladder must be nondecreasing with sigma_0 > -1")
        if self.p < 1:
            raise ValueError("p must be >= 1")


def multi_indices(n: int, order: int):
    return [a for a in product(range(order + 1), repeat=n) if sum(a) == order]


def weighted_norm(u: Field, spec: SobolevNormSpec) -> float:
    """``(sum_{|alpha| <= k} ||d^alpha u||^p_{L^p(mu_{sigma_|alpha|})})^{1/p}``."""
    total = 0.0
    for order in range(spec.k + 1):
        for alpha in multi_indices(u.grid.n, order):
            d = u.grid.diff(u.values, alpha)
            total += integrate(np.abs(d) ** spec.p, spec.sigmas[order], grid=u.grid)
    return total ** (1 / spec.p)


def _sqnorm(grid, vals, sigma):
    return integrate(vals ** 2, sigma, grid=grid)


def hessian_sqnorm(grid, vals, sigma):
    """``|| D^2 v ||^2`` with the Frobenius norm (mixed entries counted twice)."""
    n = grid.n
    tot = 0.0
    for i in range(n):
        for j in range(n):
            a = [0] * n
            a[i] += 1
            a[j] += 1
            tot += _sqnorm(grid, grid.diff(vals, a), sigma)
    return tot


def gradient_sqnorm(grid, vals, sigma, tangential_only=False):
    n = grid.n
    axes = range(n - 1) if tangential_only else range(n)
    return sum(_sqnorm(grid, grid.diff(vals, _unit(n, a)), sigma) for a in axes)


def _support_warning(phi: Field, rel=1e-8):
    v = np.abs(phi.values)
    edge = np.max(v[..., -1]) if v.size else 0.0
    if edge > rel * max(np.max(v), 1e-300):
        warnings.warn("field does not vanish at the truncation height; identity holds only up to boundary terms",
                      stacklevel=3)


def check_auxiliary_identity(phi: Field) -> float:
    """Relative residual of ``||D^2 phi||^2_{mu_3} = ||Lap phi||^2_{mu_3} + 6 ||grad' phi||^2_{mu_1}``."""
    grid = phi.grid
    _support_warning(phi)
    v = phi.values
    d2 = hessian_sqnorm(grid, v, 3)
    if d2 == 0:
        return 0.0
    lap = _sqnorm(grid, laplacian(grid, v), 3)
    gt = gradient_sqnorm(grid, v, 1, tangential_only=True)
    return abs(d2 - lap - 6 * gt) / d2


def check_hardy(v: Field) -> float:
    """Ratio ``||v||_{L^2} / ||grad v||_{L^2(mu_2)}``."""
    den = gradient_sqnorm(v.grid, v.values, 2)
    if den <= 0:
        raise ValueError("zero denominator: gradient vanishes")
    return float(np.sqrt(_sqnorm(v.grid, v.values, 0) / den))


def check_gagliardo_nirenberg(v: Field) -> float:
    """Ratio ``||grad v||^2_{mu_2} / (||v||_{mu_1} ||D^2 v||_{mu_3})``."""
    g = v.grid
    den = np.sqrt(_sqnorm(g, v.values, 1) * hessian_sqnorm(g, v.values, 3))
    if den <= 0:
        raise ValueError("zero denominator")
    return float(gradient_sqnorm(g, v.values, 2) / den)


def factorization_residual(u: Field) -> float:
    """``||L u - L_1 L_1 u||_{mu_1} / ||L u||_{mu_1}`` in strong form.

    The denominator is floored by the rounding bound of ``L u`` so that fields
    in the kernel (affine ones) report rounding noise as zero relative error
    rather than as an O(1) ratio of two rounding errors.
    """
    Lu = apply_L(u).values
    LL = apply_Lsigma(apply_Lsigma(u, 1.0), 1.0).values
    den = _sqnorm(u.grid, Lu, 1)
    num = _sqnorm(u.grid, Lu - LL, 1)
    floor = _sqnorm(u.grid, rounding_bound(u), 1)
    if num <= floor:
        return 0.0
    if den == 0:
        return 0.0 if num == 0 else np.inf
    return float(np.sqrt(num / den))


def energy_integrand(u: Field) -> float:
    """``||Lap u||^2_{mu_3} + 4 ||grad' u||^2_{mu_1}`` from the strong stencils."""
    g = u.grid
    return _sqnorm(g, laplacian(g, u.values), 3) + 4 * gradient_sqnorm(g, u.values, 1, True)


class OperatorMatrix:
    """Weak-form assembly of ``L_1`` and ``L`` on a grid.

    ``Kt`` is the stiffness matrix of ``int x_n^2 grad u . grad w``: vertical
    fluxes use the face coefficients ``a_{i+1/2} = 2 sum_{k<=i} W_{1,k}`` (so
    that ``M^{-1} Kt x_n = -2`` exactly), tangential parts the periodic
    stencil scaled so that ``M^{-1} Kt = -x_n Lap'`` there.  At the top the
    flux is either extrapolated linearly (``top="extrapolate"``, keeps affine
    fields in the kernel) or set to zero (``top="natural"``, exactly
    symmetric).  ``M`` lumps the ``mu_1`` mass.
    """

    def __init__(self, grid: Grid, top: str = "extrapolate"):
        if grid.n > 1 and not grid.periodic:
            raise ValueError("weak assembly needs periodic tangential directions")
        if top not in ("extrapolate", "natural"):
            raise ValueError(f"unknown top treatment {top!r}")
        self.grid = grid
        self.top = top
        x = grid.xn
        W1 = grid.vweights(1.0)
        h = np.diff(x)
        a = 2 * np.cumsum(W1)[:-1]
        c = a / h
        N = len(x)
        # vertical stiffness (tridiagonal): row i gets -(flux_{i+1/2} - flux_{i-1/2})
        Kv = sp.diags([np.r_[c, 0] + np.r_[0, c], -c, -c], [0, 1, -1], shape=(N, N), format="lil")
        if top == "extrapolate":
            a_top = 2 * W1.sum()
            # outgoing flux a_top * (extrapolated slope) leaves the last cell
            Kv[N - 1, N - 1] -= a_top / h[-1]
            Kv[N - 1, N - 2] += a_top / h[-1]
        Kv = Kv.tocsr()
        if grid.n == 1:
            self.K = Kv
            self.mass = W1.copy()
        else:
            dx = grid.dxt
            k = grid.n - 1
            It = sp.identity(grid.K, format="csr")
            K = sp.kron(sp.identity(grid.K ** k), Kv) * dx ** k
            D2 = -grid.dmat(0, 2)
            for ax in range(k):
                ops = [It] * k
                ops[ax] = D2
                T = ops[0]
                for o in ops[1:]:
                    T = sp.kron(T, o)
                K = K + sp.kron(T, sp.diags(W1 * x)) * dx ** k
            self.K = K.tocsr()
            self.mass = np.tile(W1, grid.K ** k) * dx ** k
        self.Minv = sp.diags(1.0 / self.mass)
        self.A = (self.K @ self.Minv @ self.K).tocsr()
        self._lu = {}

    @property
    def symmetric(self) -> bool:
        return self.top == "natural"

    def L1(self, u: np.ndarray) -> np.ndarray:
        return (self.K @ np.ravel(u)).reshape(self.grid.shape) / self.mass.reshape(self.grid.shape)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``L_h u``."""
        return self.L1(self.L1(u))

    def inner(self, u, w) -> float:
        """Discrete ``(u, w)_{mu_1}``."""
        return float(np.sum(self.mass * np.ravel(u) * np.ravel(w)))

    def form(self, u, w) -> float:
        """Bilinear form ``(L_h u, w)_{mu_1} = (Kt u)^T M^{-1} (Kt w)`` for a symmetric ``Kt``."""
        return float(np.ravel(u) @ (self.A @ np.ravel(w)))

    def factor(self, tau: float, theta: float):
        """Cached sparse LU of ``M + theta tau A``."""
        key = (float(tau), float(theta))
        if key not in self._lu:
            S = (sp.diags(self.mass) + theta * tau * self.A).tocsc()
            self._lu[key] = spla.splu(S)
        return self._lu[key]


def assemble(grid: Grid, top: str = "extrapolate") -> OperatorMatrix:
    return OperatorMatrix(grid, top)
