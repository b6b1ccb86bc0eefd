"""Fundamental system and Green kernel of the reduced radial ODE

    z u'' + (2 nu + 1) u' - z u = w,        z > 0,

for ``nu = 1/2`` (the case ``z u'' + 2 u' - z u = w``) and its ``nu = 1, 3/2``
analogues.  The homogeneous solutions are ``psi_1 = z^-nu I_nu(z)`` (bounded
at 0) and ``psi_2 = z^-nu K_nu(z)`` (decaying at infinity), with Wronskian
``psi_1 psi_2' - psi_1' psi_2 = -z^(-2 nu - 1)``.  Multiplying the ODE by
``z^(2 nu)`` gives the self-adjoint form ``(z^(2nu+1) u')' - z^(2nu+1) u =
z^(2nu) w``, hence the bounded, decaying solution

    u(z) = int_0^inf k(z, y) w(y) dy,
    k(z, y) = -y^(2 nu) psi_1(min(z, y)) psi_2(max(z, y)).

For ``nu = 1/2`` this is ``-y psi_1(z) psi_2(y)`` for ``z < y`` and
``-y psi_1(y) psi_2(z)`` for ``z > y``; the kernel is continuous on the
diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate as _integ
from scipy import special

SQ2PI = np.sqrt(2 / np.pi)
SQPI2 = np.sqrt(np.pi / 2)


def _positive(z):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("argument must be positive")
    return z


def _sinhc(a):
    """``sinh(a)/a`` with a series near 0."""
    a = np.asarray(a, dtype=float)
    small = np.abs(a) < 1e-2
    a2 = a * a
    ser = 1 + a2 / 6 * (1 + a2 / 20 * (1 + a2 / 42))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        big = np.sinh(a) / np.where(small, 1.0, a)
    return np.where(small, ser, big)


def psi1(z):
    """``sqrt(2/pi) sinh(z) / z``."""
    return SQ2PI * _sinhc(_positive(z))


def psi2(z):
    """``sqrt(pi/2) exp(-z) / z``."""
    z = _positive(z)
    return SQPI2 * np.exp(-z) / z


def dpsi1(z):
    z = _positive(z)
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    big = (zs * np.cosh(zs) - np.sinh(zs)) / zs ** 2
    # sum_k 2k z^(2k-1) / (2k+1)!
    ser = z / 3 + z ** 3 / 30 + z ** 5 / 840
    return SQ2PI * np.where(small, ser, big)


def dpsi2(z):
    z = _positive(z)
    return -SQPI2 * np.exp(-z) * (z + 1) / z ** 2


def wronskian(z):
    """``psi_1 psi_2' - psi_1' psi_2`` (equals ``-z^-2``)."""
    return psi1(z) * dpsi2(z) - dpsi1(z) * psi2(z)


def i_half_series(z, terms: int = 20):
    """Power series of the modified Bessel function ``I_{1/2}``."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for k in range(terms):
        out += (z / 2) ** (2 * k + 0.5) / (special.factorial(k) * special.gamma(k + 1.5))
    return out


def _pair_product(a, b):
    """``psi_1(a) psi_2(b)`` for ``a <= b`` without overflow."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    # e^{-b} sinh(a) / a = (e^{a-b} - e^{-a-b}) / (2a)
    small = a < 1e-2
    asafe = np.where(small, 1.0, a)
    big = (np.exp(a - b) - np.exp(-a - b)) / (2 * asafe)
    ser = np.exp(-b) * _sinhc(np.where(small, a, 0.0))
    return np.where(small, ser, big) / b


def kernel_k(z, y):
    """Green kernel ``k(z, y) = -y psi_1(min) psi_2(max)`` of the ``nu = 1/2`` ODE."""
    z = _positive(z)
    y = _positive(y)
    return -y * _pair_product(np.minimum(z, y), np.maximum(z, y))


def kernel_k_displayed(z, y):
    """Kernel with the sign convention as displayed in the source derivation:
    ``-y psi_1(z) psi_2(y)`` for ``z < y`` but ``+y psi_1(y) psi_2(z)`` for
    ``z > y``.  Kept for comparison only; it is discontinuous at ``z = y`` and
    its second branch does not solve the ODE."""
    k = kernel_k(z, y)
    return np.where(np.asarray(z) > np.asarray(y), -k, k)


def ode_operator(z, u, nu: float = 0.5, width: int = 5):
    """``z u'' + (2 nu + 1) u' - z u`` by finite differences on the grid ``z``."""
    from .grid import diff_matrix
    D1 = diff_matrix(z, 1, width)
    D2 = diff_matrix(z, 2, width)
    return z * (D2 @ u) + (2 * nu + 1) * (D1 @ u) - z * u


def solve_reduced(z, w, tail_tol: float = 1e-10, order: int = 8):
    """Bounded, decaying solution of ``z u'' + 2 u' - z u = w`` on the grid ``z``.

    ``u(z) = -psi_2(z) A(z) - psi_1(z) B(z)`` with ``A = int_0^z y psi_1 w`` and
    ``B = int_z^inf y psi_2 w``.  ``w`` is interpolated by a cubic spline and
    every grid interval is integrated by Gauss-Legendre quadrature against the
    exact exponential factors.  ``A`` and ``B`` are carried as ``e^-z A`` and
    ``e^z B`` so that nothing overflows.  ``z`` must be increasing, start at 0
    or close to it, and extend far enough for ``y psi_2(y) w(y)`` to have
    decayed; otherwise a ``ValueError`` reports a divergent (or truncated) tail.
    """
    from scipy.interpolate import CubicSpline
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(np.diff(z) <= 0) or z[0] < 0:
        raise ValueError("z grid must be increasing and nonnegative")
    f2 = SQPI2 * np.exp(-z) * w
    tail = abs(f2[-1]) * max(z[-1], 1.0)
    if tail > tail_tol * (np.max(np.abs(f2)) * max(z[-1], 1.0) + 1e-300):
        raise ValueError(f"divergent or truncated tail: |y psi_2 w| at z_max is {tail:.3e}")
    ws = CubicSpline(z, w)
    xg, wg = np.polynomial.legendre.leggauss(order)
    a, b = z[:-1], z[1:]
    h = b - a
    y = a[:, None] + 0.5 * h[:, None] * (xg + 1)
    wy = ws(y)
    q = 0.5 * h[:, None] * wg
    # y psi_1(y) e^{-b} = sqrt(2/pi) (e^{y-b} - e^{-y-b}) / 2 on [a, b]
    inc_A = np.sum(q * SQ2PI * 0.5 * (np.exp(y - b[:, None]) - np.exp(-y - b[:, None])) * wy, axis=1)
    # y psi_2(y) e^{a} = sqrt(pi/2) e^{a-y}
    inc_B = np.sum(q * SQPI2 * np.exp(a[:, None] - y) * wy, axis=1)
    N = len(z)
    At = np.zeros(N)
    Bt = np.zeros(N)
    decay = np.exp(-h)
    for i in range(N - 1):
        At[i + 1] = decay[i] * At[i] + inc_A[i]
    for i in range(N - 2, -1, -1):
        Bt[i] = decay[i] * Bt[i + 1] + inc_B[i]
    zp = np.where(z > 0, z, 1.0)
    # psi_2 A = sqrt(pi/2) At / z ;  psi_1 B = sqrt(2/pi) (1 - e^{-2z}) / (2z) Bt
    u = -SQPI2 * At / zp - SQ2PI * np.exp(-z) * _sinhc(z) * Bt
    return u


def kernel_bound_integrals(j: float, z_max: float = 60.0, n_eval: int = 60):
    """``(sup_z int z^j |k(z,y)| dy, sup_y int z^j |k(z,y)| (z/y) dz)``.

    Suprema are taken over log-spaced evaluation points in ``[1e-3, z_max]``;
    integrals are split at the diagonal and computed adaptively.
    """
    pts = np.logspace(-3, np.log10(z_max), n_eval)

    def I1(z):
        f = lambda y: z ** j * abs(kernel_k(z, y))
        a, _ = _integ.quad(f, 0, z, limit=200)
        b, _ = _integ.quad(f, z, np.inf, limit=200)
        return a + b

    def I2(y):
        f = lambda z: z ** j * abs(kernel_k(z, y)) * z / y
        a, _ = _integ.quad(f, 0, y, limit=200)
        b, _ = _integ.quad(f, y, np.inf, limit=200)
        return a + b

    return max(I1(z) for z in pts), max(I2(y) for y in pts)


def transport_kernel(z, y):
    """Kernel ``y z^-2 1_{z>y}`` of ``z v' + 2 v = w``."""
    z = np.asarray(z, float)
    y = np.asarray(y, float)
    return np.where(z > y, y / z ** 2, 0.0)


def transport_bounds(delta: float, z_eval=(0.1, 1.0, 10.0)):
    """Numerical ``sup_z int (z/y)^delta |k~| dy`` and ``sup_y int (z/y)^delta |k~| dz``."""
    s1 = max(_integ.quad(lambda y: (z / y) ** delta * transport_kernel(z, y), 0, z, limit=200)[0]
             for z in z_eval)
    s2 = max(_integ.quad(lambda z: (z / y) ** delta * transport_kernel(z, y), y, np.inf, limit=200)[0]
             for y in z_eval)
    return s1, s2


@dataclass(frozen=True)
class FundamentalPair:
    """``psi_1 = z^-nu I_nu``, ``psi_2 = z^-nu K_nu`` for ``z u'' + (2nu+1) u' - z u = 0``.

    ``nu = 1/2`` and ``3/2`` use elementary closed forms, other orders the
    exponentially scaled Bessel routines.
    """

    nu: float = 0.5

    def psi1(self, z):
        z = _positive(z)
        if self.nu == 0.5:
            return psi1(z)
        if self.nu == 1.5:
            # I_{3/2} = sqrt(2/(pi z)) (cosh z - sinh z / z)
            small = z < 1e-2
            zs = np.where(small, 1.0, z)
            big = SQ2PI * (np.cosh(z) - np.sinh(z) / zs) / zs ** 2
            ser = SQ2PI * (1 / 3 + z ** 2 / 30 + z ** 4 / 840)
            return np.where(small, ser, big)
        return z ** -self.nu * special.ive(self.nu, z) * np.exp(z)

    def psi2(self, z):
        z = _positive(z)
        if self.nu == 0.5:
            return psi2(z)
        if self.nu == 1.5:
            # K_{3/2} = sqrt(pi/(2z)) e^{-z} (1 + 1/z)
            return SQPI2 * np.exp(-z) * (1 + 1 / z) / z ** 2
        return z ** -self.nu * special.kve(self.nu, z) * np.exp(-z)

    def wronskian(self, z, h: float = 1e-5):
        """Numerical ``psi_1 psi_2' - psi_1' psi_2`` by complex-free central differences."""
        z = _positive(z)
        d1 = (self.psi1(z * (1 + h)) - self.psi1(z * (1 - h))) / (2 * h * z)
        d2 = (self.psi2(z * (1 + h)) - self.psi2(z * (1 - h))) / (2 * h * z)
        return self.psi1(z) * d2 - d1 * self.psi2(z)

    def kernel(self, z, y):
        z = _positive(z)
        y = _positive(y)
        a, b = np.minimum(z, y), np.maximum(z, y)
        return -y ** (2 * self.nu) * self.psi1(a) * self.psi2(b)
