"""Von Mises (hodograph) transformation of the thin-film equation.

With ``hh = sqrt(h)`` the film equation ``d_s h + div(h grad Lap h) = 0``
becomes ``d_s hh = -E(hh)`` where

    E = div(hh^2 grad Lap hh) + 4 hh grad hh . grad Lap hh + hh (Lap hh)^2
        + 2 hh |D^2 hh|^2 + 2 |grad hh|^2 Lap hh + 4 sum_ij d_i hh d_j hh d_ij hh.

Swapping ``y_n`` with ``x_n = hh(s, y)`` gives the height function ``v(t, x)``
with ``hh(t, x', v(t, x)) = x_n``; then ``d_t v = v_n E``.  All y-derivatives
are obtained from x-derivatives by the chain rule

    d_{y_i} w = d_i w - (d_i v / v_n) d_n w   (i < n),     d_{y_n} w = d_n w / v_n,

applied to ``hh = x_n`` (whose y-gradient is known in closed form).  Writing
``v = x_n + u`` the equation reads ``d_t u + L u = f[u]`` with ``f`` quadratic
in ``u``; here ``f[u] = N(u) - DN(0) u`` where ``N(u) = v_n E`` is the exact
discrete rate and ``DN(0)`` its exact discrete linearization (complex step),
which approximates ``-L``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid


def _unit(n, axis, m=1):
    a = [0] * n
    a[axis] = m
    return tuple(a)


class Pullback:
    """Chain-rule derivatives in y of functions given in x-coordinates.

    ``u`` may be complex (used for complex-step linearization).
    """

    def __init__(self, grid: Grid, u):
        self.grid = grid
        n = grid.n
        self.n = n
        u = np.asarray(u)
        self.u = u
        self.un = grid.diff(u, _unit(n, n - 1))
        self.vn = 1 + self.un
        if np.isrealobj(self.vn) and np.any(self.vn <= 0):
            raise ValueError("v_n = 1 + d_n u must be positive (graph condition violated)")
        if np.iscomplexobj(self.vn) and np.any(self.vn.real <= 0):
            raise ValueError("v_n = 1 + d_n u must be positive (graph condition violated)")
        self.ut = [grid.diff(u, _unit(n, i)) for i in range(n - 1)]

    def dy(self, F, i: int):
        """``d_{y_i}`` of the function with x-samples ``F``."""
        g, n = self.grid, self.n
        Fn = g.diff(F, _unit(n, n - 1))
        if i == n - 1:
            return Fn / self.vn
        return g.diff(F, _unit(n, i)) - self.ut[i] / self.vn * Fn

    def grad_hh(self):
        """``grad_y hh - e_n`` for ``hh = x_n``: ``(-grad' u, -u_n) / v_n``."""
        return [-ut / self.vn for ut in self.ut] + [-self.un / self.vn]

    def gradient(self, w):
        return [self.dy(w, i) for i in range(self.n)]


def pullback_gradient(w: Field, v: Field) -> list[Field]:
    """y-gradient of the function represented by ``w`` in x-coordinates,
    for the height function ``v``."""
    g = w.grid
    xn = g.coords()[-1]
    P = Pullback(g, v.values - xn)
    return [w.with_values(np.real_if_close(c)) for c in P.gradient(w.values)]


@dataclass
class FilmTerms:
    """y-derivatives of ``hh = x_n`` on the x-grid (base state subtracted)."""

    g: list          # grad hh - e_n
    H: list          # Hessian, H[i][j]
    lap: np.ndarray
    T: list          # grad Lap hh


def film_terms(P: Pullback) -> FilmTerms:
    n = P.n
    gt = P.grad_hh()
    H = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            H[i][j] = P.dy(gt[i], j)
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.5 * (H[i][j] + H[j][i])
            H[i][j] = H[j][i] = s
    lap = sum(H[i][i] for i in range(n))
    T = [P.dy(lap, i) for i in range(n)]
    return FilmTerms(gt, H, lap, T)


def transformed_rate(u, grid: Grid | None = None, return_terms: bool = False):
    """``N(u) = d_t u`` of the transformed film equation (array or Field input)."""
    if isinstance(u, Field):
        grid, vals = u.grid, u.values
    else:
        vals = np.asarray(u)
    n = grid.n
    xn = grid.coords()[-1]
    P = Pullback(grid, vals)
    F = film_terms(P)
    e = [np.zeros(grid.shape)] * (n - 1) + [np.ones(grid.shape)]
    g = [F.g[i] + e[i] for i in range(n)]
    terms = {
        "div": sum(P.dy(xn ** 2 * F.T[i], i) for i in range(n)),
        "grad_gradlap": 4 * xn * sum(g[i] * F.T[i] for i in range(n)),
        "lap_sq": xn * F.lap ** 2,
        "hess_sq": 2 * xn * sum(F.H[i][j] ** 2 for i in range(n) for j in range(n)),
        "gradsq_lap": 2 * sum(gi ** 2 for gi in g) * F.lap,
        "ghg": 4 * sum(g[i] * g[j] * F.H[i][j] for i in range(n) for j in range(n)),
    }
    for name, val in terms.items():
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"non-finite values in term {name}")
    E = sum(terms.values())
    N = P.vn * E
    if return_terms:
        return N, terms
    return N


def linearized_rate(u, grid: Grid, h: float = 1e-30):
    """Exact discrete linearization ``DN(0) u`` by complex step."""
    vals = np.asarray(u, dtype=float)
    return np.imag(transformed_rate(1j * h * vals, grid)) / h


def nonlinearity(u: Field, linear_part: str = "consistent") -> Field:
    """Quadratic remainder ``f[u]`` of the transformed equation.

    ``linear_part="consistent"`` (default) returns ``N(u) - DN(0) u`` with the
    exact discrete linearization, so ``f`` is quadratic at the discrete level
    too.  ``"strong"`` returns ``N(u) + L u`` with the strong-form ``L``; it
    agrees up to discretization error, which is linear in ``u``.
    """
    g = u.grid
    grad_sup = max(np.max(np.abs(g.diff(u.values, _unit(g.n, i)))) for i in range(g.n))
    if grad_sup >= 1:
        raise ValueError(f"||grad u||_inf = {grad_sup:.3g} >= 1")
    N = transformed_rate(u.values, g)
    if linear_part == "consistent":
        lin = linearized_rate(u.values, g)
        out = N - lin
    elif linear_part == "strong":
        from .linop import apply_L
        out = N + apply_L(u).values
    else:
        raise ValueError(f"unknown linear_part {linear_part!r}")
    return u.with_values(out)


# ---------------------------------------------------------------- film states


@dataclass(frozen=True, eq=False)
class FilmState:
    """Film height ``h`` on a y-grid: tangential nodes of ``grid``, vertical
    nodes ``y`` (increasing, typically ``[-Ypad, Ymax]``)."""

    grid: Grid
    y: np.ndarray
    h: np.ndarray
    s: float | None = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        shape = self.grid.shape[:-1] + (len(self.y),)
        if h.shape != shape:
            raise ValueError(f"film samples of shape {h.shape}, expected {shape}")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError("film height must be finite and nonnegative")
        object.__setattr__(self, "h", h)

    @classmethod
    def from_function(cls, grid: Grid, y, fn, s=None) -> "FilmState":
        y = np.asarray(y, dtype=float)
        axes = [grid.xt] * (grid.n - 1) + [y]
        C = np.meshgrid(*axes, indexing="ij")
        return cls(grid, y, np.broadcast_to(fn(*C), C[0].shape), s)


def _columns(a):
    return a.reshape(-1, a.shape[-1])


def forward_transform(hs: FilmState, grid: Grid | None = None) -> Field:
    """Perturbation ``u = v - x_n`` of a film state.

    Along every vertical line the positive part of ``sqrt h`` must be strictly
    increasing; ``v(x_n)`` is found by binary search and linear interpolation
    of the sampled profile, with the contact point extrapolated linearly from
    the first positive samples and linear extrapolation above the top sample.
    """
    grid = hs.grid if grid is None else grid
    y = hs.y
    r = np.sqrt(_columns(hs.h))
    xn = grid.xn
    out = np.empty((r.shape[0], len(xn)))
    for c, col in enumerate(r):
        pos = np.nonzero(col > 0)[0]
        if len(pos) < 2:
            raise ValueError(f"column {c}: fewer than two positive samples")
        p0 = pos[0]
        if np.any(col[p0:] <= 0) or np.any(np.diff(col[p0:]) <= 0):
            bad = p0 + int(np.argmax((np.diff(col[p0:]) <= 0) | (col[p0 + 1:] <= 0)))
            raise ValueError(f"column {c}: sqrt(h) not strictly increasing near y_n = {y[bad]:.6g}")
        slope = (col[p0 + 1] - col[p0]) / (y[p0 + 1] - y[p0])
        yc = y[p0] - col[p0] / slope
        if p0 > 0:
            yc = max(yc, y[p0 - 1])
        R = np.r_[0.0, col[p0:]]
        Y = np.r_[yc, y[p0:]]
        v = np.interp(xn, R, Y)
        above = xn > R[-1]
        if np.any(above):
            top = (Y[-1] - Y[-2]) / (R[-1] - R[-2])
            v[above] = Y[-1] + top * (xn[above] - R[-1])
        out[c] = v
    v = out.reshape(grid.shape)
    return Field(grid, v - grid.coords()[-1], hs.s)


def inverse_transform(u: Field, y) -> FilmState:
    """Film state with ``h(y', y_n) = x_n^2`` where ``v(y', x_n) = y_n``."""
    g = u.grid
    y = np.asarray(y, dtype=float)
    xn = g.xn
    v = _columns(u.values + g.coords()[-1])
    if np.any(np.diff(v, axis=-1) <= 0):
        raise ValueError("v is not strictly increasing in x_n")
    out = np.zeros((v.shape[0], len(y)))
    for c, col in enumerate(v):
        x = np.interp(y, col, xn)
        above = y > col[-1]
        if np.any(above):
            top = (xn[-1] - xn[-2]) / (col[-1] - col[-2])
            x[above] = xn[-1] + top * (y[above] - col[-1])
        x[y <= col[0]] = 0.0
        out[c] = x ** 2
    return FilmState(g, y, out.reshape(g.shape[:-1] + (len(y),)), u.t)


def free_boundary(u: Field, lam: float = 0.0) -> np.ndarray:
    """Level set ``{h = lam}`` as the graph ``y_n = v(x', sqrt(lam))``."""
    g = u.grid
    v = _columns(u.values + g.coords()[-1])
    x0 = np.sqrt(lam)
    vals = np.array([np.interp(x0, g.xn, col) for col in v])
    return vals.reshape(g.shape[:-1])


def quasi_isometry_check(v: Field, eps: float, pairs: int = 10_000, seed: int = 0):
    """``(min, max)`` of ``|phi(x) - phi(xb)| / |x - xb|`` for ``phi = (x', v)``."""
    g = v.grid
    n = g.n
    # gradient deviation measured as the Euclidean norm of grad v - e_n
    grads = [g.diff(v.values, _unit(n, i)) - (i == n - 1) for i in range(n)]
    dev = float(np.max(np.sqrt(sum(d ** 2 for d in grads))))
    if not dev < eps < 1:
        raise ValueError(f"precondition violated: ||grad v - e_n||_inf = {dev:.4g}, eps = {eps}")
    rng = np.random.default_rng(seed)
    pts = g.points()
    phi = pts.copy()
    phi[:, -1] = v.values.ravel()
    i = rng.integers(0, len(pts), pairs)
    j = rng.integers(0, len(pts), pairs)
    keep = i != j
    num = np.linalg.norm(phi[i[keep]] - phi[j[keep]], axis=1)
    den = np.linalg.norm(pts[i[keep]] - pts[j[keep]], axis=1)
    r = num / den
    return float(r.min()), float(r.max())


def boundary_distance_ratios(u: Field, n_line: int = 4000):
    """Ratios ``dist(y, complement of spt h) / hh(y)`` at the mapped grid points.

    The complement's boundary is the contact line ``y_n = v(x', 0)``, sampled
    densely (n = 1: the single point).  Points with ``x_n = 0`` are skipped.
    """
    g = u.grid
    v = u.values + g.coords()[-1]
    pts = g.points()
    Y = pts.copy()
    Y[:, -1] = v.ravel()
    hh = pts[:, -1]
    keep = hh > 0
    Y, hh = Y[keep], hh[keep]
    if g.n == 1:
        d = Y[:, 0] - v[0]
    elif g.n == 2:
        from scipy.interpolate import CubicSpline
        xs = np.append(g.xt, g.Lambda)
        line = CubicSpline(xs, np.append(v[:, 0], v[0, 0]), bc_type="periodic")
        s = np.linspace(-g.Lambda, 2 * g.Lambda, 3 * n_line)
        L = np.column_stack([s, line(np.mod(s, g.Lambda))])
        d = np.empty(len(Y))
        for k0 in range(0, len(Y), 2048):
            blk = Y[k0:k0 + 2048]
            dd = np.min(np.linalg.norm(blk[:, None, :] - L[None], axis=-1), axis=1)
            below = blk[:, 1] < line(np.mod(blk[:, 0], g.Lambda))
            d[k0:k0 + 2048] = np.where(below, 0.0, dd)
    else:
        raise NotImplementedError("distance check implemented for n <= 2")
    r = d / hh
    return float(r.min()), float(r.max())


# ------------------------------------------------------------- weak residual


def _bump(r):
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1
    q = np.where(inside, 1 - r * r, 1.0)
    b = np.where(inside, np.exp(1 - 1 / q), 0.0)
    db = np.where(inside, b * (-2 * r / q ** 2), 0.0)
    return b, db


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported ``phi(s, y) = chi(s) prod_i b((y_i - c_i)/w_i)``.

    Tangential offsets are wrapped to the period ``Lambda`` when given.
    """

    s_center: float
    s_width: float
    center: tuple
    widths: tuple
    Lambda: float | None = None

    @property
    def s_support(self):
        return self.s_center - self.s_width, self.s_center + self.s_width

    def __call__(self, s, Y):
        """Return ``(phi, d_s phi, grad_y phi)`` at time ``s`` and points ``Y`` (..., n)."""
        n = Y.shape[-1]
        chi, dchi = _bump((s - self.s_center) / self.s_width)
        dchi = dchi / self.s_width
        bs, dbs = [], []
        for i in range(n):
            d = Y[..., i] - self.center[i]
            if i < n - 1 and self.Lambda is not None:
                d = np.mod(d + self.Lambda / 2, self.Lambda) - self.Lambda / 2
            b, db = _bump(d / self.widths[i])
            bs.append(b)
            dbs.append(db / self.widths[i])
        prod = np.prod(bs, axis=0)
        grad = []
        for i in range(n):
            others = np.prod([bs[k] for k in range(n) if k != i], axis=0) if n > 1 else 1.0
            grad.append(chi * dbs[i] * others)
        return chi * prod, dchi * prod, grad


def random_test_functions(count: int, grid: Grid, T: float, y_range=(0.2, 2.0),
                          seed: int = 0) -> list[TestFunction]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        sw = rng.uniform(0.15, 0.45) * T
        sc = rng.uniform(sw + 0.02 * T, T - sw - 0.02 * T)
        c = [rng.uniform(0, grid.Lambda) for _ in range(grid.n - 1)]
        w = [rng.uniform(0.15, 0.35) * grid.Lambda for _ in range(grid.n - 1)]
        wn = rng.uniform(0.2, 0.6)
        cn = rng.uniform(y_range[0], y_range[1])
        out.append(TestFunction(sc, sw, tuple(c + [cn]), tuple(w + [wn]),
                                grid.Lambda if grid.n > 1 else None))
    return out


def film_flux(u_vals, grid: Grid):
    """``(v, v_n, grad_y Lap_y h)`` in x-coordinates for ``h = hh^2``, ``hh = x_n``."""
    n = grid.n
    xn = grid.coords()[-1]
    P = Pullback(grid, u_vals)
    F = film_terms(P)
    g = F.g
    # Lap h = 2 hh Lap hh + 2 |grad hh|^2 ; subtract the base value 2
    gsq_m1 = sum(gi ** 2 for gi in g) + 2 * g[-1]
    S = 2 * xn * F.lap + 2 * gsq_m1
    Gam = [P.dy(S, i) for i in range(n)]
    return u_vals + xn, P.vn, Gam


def weak_residual(times, states, phi: TestFunction, grid: Grid | None = None,
                  relative: bool = False) -> float:
    """``int int h d_s phi + h grad Lap h . grad phi dy ds`` over a trajectory.

    ``states`` are perturbation fields (or film states, which are transformed
    forward) at ``times``.  The y-integral is evaluated on the positivity set
    by the change of variables ``y = (x', v(x))``, ``dy = v_n dx``, so no
    derivative is ever taken across the contact line; outside the positivity
    set the integrand is zero.  Time integration is the trapezoidal rule.
    With ``relative=True`` the result is divided by the same integral of the
    absolute values of the two terms.
    """
    times = np.asarray(times, dtype=float)
    a, b = phi.s_support
    if a <= times[0] or b >= times[-1]:
        raise ValueError("test function support touches the temporal endpoints")
    vals, scale = [], []
    for s, st in zip(times, states):
        if isinstance(st, FilmState):
            st = forward_transform(st, grid)
        g = st.grid
        if not (a < s < b):
            vals.append(0.0)
            scale.append(0.0)
            continue
        v, vn, Gam = film_flux(st.values, g)
        xn = g.coords()[-1]
        Y = np.stack(g.coords()[:-1] + [v], axis=-1)
        _, ds_phi, grad_phi = phi(s, Y)
        h = xn ** 2
        t1 = h * ds_phi
        t2 = h * sum(Gam[i] * grad_phi[i] for i in range(g.n))
        W = g.weights(0.0) * vn
        vals.append(float(np.sum(W * (t1 + t2))))
        scale.append(float(np.sum(W * (np.abs(t1) + np.abs(t2)))))
    R = float(np.trapezoid(vals, times))
    if relative:
        return R / float(np.trapezoid(scale, times))
    return R
